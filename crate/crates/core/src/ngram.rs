//! Character n-gram language model with additive smoothing.
//!
//! Each label gets an order-(n-1) Markov model over charset indices. Every
//! text is padded with `n - 1` boundary markers so that each character is
//! predicted exactly once from a full-length history. The boundary marker is
//! never predicted, so the smoothing denominator ranges over the charset
//! (UNK included) only:
//!
//! ```text
//! P(c | h) = (count(h, c) + alpha) / (total(h) + alpha * V)
//! ```
//!
//! Unseen histories fall back to the uniform `1 / V`; there is no backoff.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Charset, Corpus, Label};
use crate::envelope::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::scores::Scores;

pub const MODEL_MAGIC: &[u8; 4] = b"LIDN";
pub const MODEL_VERSION: u32 = 1;

/// Boundary marker used in histories. Never a charset index.
pub const BOS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramConfig {
    pub n: usize,
    pub alpha: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { n: 7, alpha: 0.1 }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config(format!("n-gram order must be >= 1, got {}", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct HistoryRow {
    total: u64,
    next: HashMap<u32, u64>,
}

type CountTable = HashMap<Box<[u32]>, HistoryRow>;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    charset: Charset,
    labels: Vec<Label>,
    tables: Vec<CountTable>,
}

impl NgramModel {
    pub fn train(corpus: &Corpus, config: NgramConfig, charset: &Charset) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let labels = corpus.labels().to_vec();
        let mut tables: Vec<CountTable> = vec![HashMap::new(); labels.len()];
        let mut padded: Vec<u32> = Vec::new();
        for inst in corpus.instances() {
            let li = corpus
                .label_index(&inst.label.code)
                .ok_or_else(|| Error::UnknownLabel(inst.label.code.clone()))?;
            pad_into(&mut padded, config.n, charset, &inst.text);
            let table = &mut tables[li];
            for window in padded.windows(config.n) {
                let (hist, next) = window.split_at(config.n - 1);
                let row = match table.get_mut(hist) {
                    Some(row) => row,
                    None => table.entry(hist.into()).or_default(),
                };
                row.total += 1;
                *row.next.entry(next[0]).or_default() += 1;
            }
        }
        Ok(NgramModel {
            config,
            charset: charset.clone(),
            labels,
            tables,
        })
    }

    pub fn config(&self) -> NgramConfig {
        self.config
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    fn label_index(&self, code: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l.code == code)
            .ok_or_else(|| Error::UnknownLabel(code.to_owned()))
    }

    /// Raw count of `next` after `history` for a label. `history` must hold
    /// `n - 1` symbols (charset indices or [`BOS`]).
    pub fn count(&self, label: usize, history: &[u32], next: u32) -> u64 {
        self.tables[label]
            .get(history)
            .and_then(|r| r.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn history_total(&self, label: usize, history: &[u32]) -> u64 {
        self.tables[label].get(history).map_or(0, |r| r.total)
    }

    /// Smoothed conditional probability in linear space. Zero for symbols
    /// outside the charset, such as [`BOS`].
    pub fn prob(&self, label: usize, history: &[u32], next: u32) -> f64 {
        if next as usize >= self.charset.size() {
            return 0.0;
        }
        let v = self.charset.size() as f64;
        let a = self.config.alpha;
        (self.count(label, history, next) as f64 + a) / (self.history_total(label, history) as f64 + a * v)
    }

    /// Histories observed for a label, in canonical order.
    pub fn histories(&self, label: usize) -> Vec<&[u32]> {
        let mut h: Vec<&[u32]> = self.tables[label].keys().map(|k| &k[..]).collect();
        h.sort_unstable();
        h
    }

    /// Number of stored (history, next) cells over all labels.
    pub fn table_entries(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.values())
            .map(|r| r.next.len())
            .sum()
    }

    /// Sum of every stored count.
    pub fn total_events(&self) -> u64 {
        self.tables
            .iter()
            .flat_map(|t| t.values())
            .map(|r| r.total)
            .sum()
    }

    /// Rough heap footprint of the count tables, in bytes.
    pub fn memory_estimate(&self) -> usize {
        let rows: usize = self.tables.iter().map(|t| t.len()).sum();
        let key = 16 + 4 * (self.config.n - 1);
        // hashbrown slot + control byte overheads, rounded up
        rows * (key + 64) + self.table_entries() * 24
    }

    pub fn log_prob(&self, text: &str, label: &str) -> Result<f64> {
        let li = self.label_index(label)?;
        let mut padded = Vec::new();
        pad_into(&mut padded, self.config.n, &self.charset, text);
        Ok(self.log_prob_padded(li, &padded))
    }

    fn log_prob_padded(&self, label: usize, padded: &[u32]) -> f64 {
        let n = self.config.n;
        let a = self.config.alpha;
        let av = a * self.charset.size() as f64;
        let table = &self.tables[label];
        let mut sum = 0.0;
        for window in padded.windows(n) {
            let (hist, next) = window.split_at(n - 1);
            let (c, t) = match table.get(hist) {
                Some(row) => (row.next.get(&next[0]).copied().unwrap_or(0), row.total),
                None => (0, 0),
            };
            sum += ((c as f64 + a) / (t as f64 + av)).ln();
        }
        sum
    }

    /// Scores every label under a uniform prior.
    pub fn classify(&self, text: &str) -> Scores {
        let mut padded = Vec::new();
        pad_into(&mut padded, self.config.n, &self.charset, text);
        let values = (0..self.labels.len())
            .map(|li| self.log_prob_padded(li, &padded))
            .collect();
        Scores::from_values(&self.labels, values)
    }

    /// Fraction of `corpus` instances whose gold label wins.
    pub fn accuracy(&self, corpus: &Corpus) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let correct = corpus
            .instances()
            .iter()
            .filter(|inst| self.classify(&inst.text).best.code == inst.label.code)
            .count();
        correct as f64 / corpus.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.len(self.config.n);
        w.f64(self.config.alpha);
        envelope::write_charset(&mut w, &self.charset);
        envelope::write_labels(&mut w, &self.labels);
        for table in &self.tables {
            let mut rows: Vec<(&Box<[u32]>, &HistoryRow)> = table.iter().collect();
            rows.sort_unstable_by(|a, b| a.0.cmp(b.0));
            w.len(rows.len());
            for (hist, row) in rows {
                for &s in hist.iter() {
                    w.u32(s);
                }
                let mut cells: Vec<(u32, u64)> = row.next.iter().map(|(&c, &k)| (c, k)).collect();
                cells.sort_unstable();
                w.len(cells.len());
                for (c, k) in cells {
                    w.u32(c);
                    w.u64(k);
                }
            }
        }
        envelope::seal(MODEL_MAGIC, MODEL_VERSION, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let payload = envelope::open(MODEL_MAGIC, &[MODEL_VERSION], bytes)?;
        let mut r = Reader::new(payload);
        let config = NgramConfig {
            n: r.u32()? as usize,
            alpha: r.f64()?,
        };
        config.validate().map_err(|e| Error::Payload(e.to_string()))?;
        let charset = envelope::read_charset(&mut r)?;
        let labels = envelope::read_labels(&mut r)?;
        let v = charset.size() as u32;
        let mut tables = Vec::with_capacity(labels.len());
        for _ in 0..labels.len() {
            let rows = r.count()?;
            let mut table = CountTable::with_capacity(rows);
            for _ in 0..rows {
                let mut hist = Vec::with_capacity(config.n - 1);
                for _ in 0..config.n - 1 {
                    let s = r.u32()?;
                    if s != BOS && s >= v {
                        return Err(Error::Payload(format!("history symbol {s} out of range")));
                    }
                    hist.push(s);
                }
                let cells = r.len()?;
                let mut row = HistoryRow::default();
                for _ in 0..cells {
                    let c = r.u32()?;
                    if c >= v {
                        return Err(Error::Payload(format!("char index {c} out of range")));
                    }
                    let k = r.u64()?;
                    row.total += k;
                    row.next.insert(c, k);
                }
                table.insert(hist.into_boxed_slice(), row);
            }
            tables.push(table);
        }
        r.finish()?;
        Ok(NgramModel {
            config,
            charset,
            labels,
            tables,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable rendering of the whole model.
    pub fn dump_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            history: Vec<String>,
            total: u64,
            next: BTreeMap<String, u64>,
        }
        #[derive(Serialize)]
        struct Table {
            label: String,
            group_id: Option<u32>,
            histories: Vec<Row>,
        }
        #[derive(Serialize)]
        struct Dump {
            format: &'static str,
            version: u32,
            n: usize,
            alpha: f64,
            charset: Vec<String>,
            table_entries: usize,
            tables: Vec<Table>,
        }
        let sym = |s: u32| -> String {
            if s == BOS {
                "<s>".into()
            } else {
                self.charset
                    .char_at(s as usize)
                    .map_or_else(|| "<unk>".into(), String::from)
            }
        };
        let mut charset: Vec<String> = self.charset.chars().iter().map(|&c| c.to_string()).collect();
        charset.push("<unk>".into());
        let tables = self
            .labels
            .iter()
            .enumerate()
            .map(|(li, label)| Table {
                label: label.code.clone(),
                group_id: label.group_id,
                histories: self
                    .histories(li)
                    .into_iter()
                    .map(|h| {
                        let row = &self.tables[li][h];
                        Row {
                            history: h.iter().map(|&s| sym(s)).collect(),
                            total: row.total,
                            next: row.next.iter().map(|(&c, &k)| (sym(c), k)).collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&Dump {
            format: "LIDN",
            version: MODEL_VERSION,
            n: self.config.n,
            alpha: self.config.alpha,
            charset,
            table_entries: self.table_entries(),
            tables,
        })?)
    }
}

fn pad_into(buf: &mut Vec<u32>, n: usize, charset: &Charset, text: &str) {
    buf.clear();
    buf.extend(std::iter::repeat_n(BOS, n - 1));
    buf.extend(text.chars().map(|c| charset.lookup(c) as u32));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub accuracy: f64,
    pub table_entries: usize,
    pub memory_estimate: usize,
}

/// Trains one model per order in `n_min..=n_max` and scores each on `dev`.
pub fn sweep(
    train: &Corpus,
    dev: &Corpus,
    charset: &Charset,
    n_min: usize,
    n_max: usize,
    alpha: f64,
) -> Result<Vec<SweepRow>> {
    if n_min > n_max {
        return Err(Error::Config(format!(
            "sweep range is inverted: {n_min} > {n_max}"
        )));
    }
    (n_min..=n_max)
        .map(|n| {
            let model = NgramModel::train(train, NgramConfig { n, alpha }, charset)?;
            Ok(SweepRow {
                n,
                accuracy: model.accuracy(dev),
                table_entries: model.table_entries(),
                memory_estimate: model.memory_estimate(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_charset;

    fn corpus(pairs: &[(&str, &str)]) -> Corpus {
        Corpus::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn abc() -> Charset {
        Charset::from_chars(vec!['a', 'b']).unwrap()
    }

    #[test]
    fn bigram_counts_single_instance() {
        let m = NgramModel::train(&corpus(&[("ab", "L1")]), NgramConfig { n: 2, alpha: 0.1 }, &abc()).unwrap();
        assert_eq!(m.count(0, &[BOS], 0), 1);
        assert_eq!(m.count(0, &[0], 1), 1);
        assert_eq!(m.total_events(), 2);
    }

    #[test]
    fn bigram_counts_two_instances() {
        let m = NgramModel::train(
            &corpus(&[("aa", "L1"), ("ab", "L1")]),
            NgramConfig { n: 2, alpha: 0.1 },
            &abc(),
        )
        .unwrap();
        assert_eq!(m.count(0, &[BOS], 0), 2);
        assert_eq!(m.count(0, &[0], 0), 1);
        assert_eq!(m.count(0, &[0], 1), 1);
        assert_eq!(m.history_total(0, &[0]), 2);
    }

    #[test]
    fn log_prob_hand_values() {
        let m = NgramModel::train(&corpus(&[("ab", "L1")]), NgramConfig { n: 2, alpha: 0.1 }, &abc()).unwrap();
        let expected = 2.0 * (1.1f64 / 1.3).ln();
        assert!((m.log_prob("ab", "L1").unwrap() - expected).abs() < 1e-12);

        let expected = (0.1f64 / 1.3).ln() + (0.1f64 / 0.3).ln();
        assert!((m.log_prob("zz", "L1").unwrap() - expected).abs() < 1e-12);

        assert!(matches!(m.log_prob("ab", "L9"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn huge_alpha_tends_to_uniform() {
        let m = NgramModel::train(
            &corpus(&[("abba", "L1")]),
            NgramConfig { n: 3, alpha: 1e12 },
            &abc(),
        )
        .unwrap();
        let lp = m.log_prob("ab", "L1").unwrap();
        assert!((lp - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn separable_toy_and_empty_text() {
        let c = corpus(&[("aaaa", "L1"), ("bbbb", "L2")]);
        let cs = build_charset(&c, None).unwrap();
        let m = NgramModel::train(&c, NgramConfig { n: 2, alpha: 0.1 }, &cs).unwrap();
        assert_eq!(m.classify("aaa").best.code, "L1");
        assert_eq!(m.classify("bb").best.code, "L2");

        let s = m.classify("");
        assert!(s.per_label.iter().all(|(_, v)| *v == 0.0));
        assert_eq!(s.best.code, "L1");
    }

    #[test]
    fn unigram_model_has_empty_history() {
        let m = NgramModel::train(&corpus(&[("aab", "L")]), NgramConfig { n: 1, alpha: 0.5 }, &abc()).unwrap();
        assert_eq!(m.count(0, &[], 0), 2);
        assert_eq!(m.history_total(0, &[]), 3);
        let lp = m.log_prob("b", "L").unwrap();
        assert!((lp - (1.5f64 / 4.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let c = corpus(&[("a", "L")]);
        assert!(NgramModel::train(&c, NgramConfig { n: 0, alpha: 0.1 }, &abc()).is_err());
        assert!(NgramModel::train(&c, NgramConfig { n: 2, alpha: 0.0 }, &abc()).is_err());
        assert!(matches!(
            NgramModel::train(&Corpus::default(), NgramConfig::default(), &abc()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn sweep_degenerate_and_inverted() {
        let c = corpus(&[("abab", "L1"), ("bbaa", "L2")]);
        let rows = sweep(&c, &c, &abc(), 2, 2, 0.1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 2);
        assert!(sweep(&c, &c, &abc(), 3, 2, 0.1).is_err());
    }

    #[test]
    fn bytes_round_trip_and_version_error() {
        let c = corpus(&[("abzab", "L1"), ("bba", "L2")]);
        let m = NgramModel::train(&c, NgramConfig { n: 3, alpha: 0.1 }, &abc()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(NgramModel::from_bytes(&bytes).unwrap(), m);

        let mut v0 = bytes.clone();
        v0[4..8].copy_from_slice(&0u32.to_le_bytes());
        match NgramModel::from_bytes(&v0) {
            Err(Error::Version { found: 0, supported }) => assert_eq!(supported, vec![MODEL_VERSION]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_names_boundary_and_unknown() {
        let m = NgramModel::train(&corpus(&[("az", "L1")]), NgramConfig { n: 2, alpha: 0.1 }, &abc()).unwrap();
        let json = m.dump_json().unwrap();
        assert!(json.contains("<s>"));
        assert!(json.contains("<unk>"));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["n"], 2);
    }
}
