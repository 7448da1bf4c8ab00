//! Labeled corpora in the `text<TAB>label` layout, corpus statistics and
//! the character inventory shared by both classifiers.
//!
//! Characters are unicode scalar values taken exactly as read: no case
//! folding, no normalization, no punctuation stripping.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Language or variety code, optionally assigned to a language group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub code: String,
    pub group_id: Option<u32>,
}

impl Label {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        validate_code(&code)?;
        Ok(Label {
            code,
            group_id: None,
        })
    }

    pub fn with_group(mut self, group_id: u32) -> Self {
        self.group_id = Some(group_id);
        self
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

fn validate_code(code: &str) -> Result<()> {
    if code.is_empty() {
        return Err(Error::Config("label code is empty".into()));
    }
    if code.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!("label code {code:?} contains whitespace")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub text: String,
    pub label: Label,
}

/// Instances in file order plus the sorted set of labels they use.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    instances: Vec<Instance>,
    labels: Vec<Label>,
}

impl Corpus {
    /// Builds a corpus from `(text, code)` pairs, validating each instance.
    pub fn from_pairs<I, S, L>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, L)>,
        S: Into<String>,
        L: Into<String>,
    {
        let mut instances = Vec::new();
        for (i, (text, code)) in pairs.into_iter().enumerate() {
            let text = text.into();
            if text.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    message: "empty text field".into(),
                });
            }
            if text.contains('\t') || text.contains('\n') {
                return Err(Error::Format {
                    line: i + 1,
                    message: "text contains a TAB or newline".into(),
                });
            }
            instances.push(Instance {
                text,
                label: Label::new(code)?,
            });
        }
        Ok(Self::from_instances(instances))
    }

    pub fn from_instances(instances: Vec<Instance>) -> Self {
        let labels: BTreeSet<Label> = instances.iter().map(|i| i.label.clone()).collect();
        Corpus {
            instances,
            labels: dedup_by_code(labels),
        }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn label_index(&self, code: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.code.as_str().cmp(code)).ok()
    }

    /// Attaches group ids from a `code → group` map; unmapped labels keep no group.
    pub fn with_groups(mut self, groups: &BTreeMap<String, u32>) -> Self {
        for inst in &mut self.instances {
            inst.label.group_id = groups.get(&inst.label.code).copied();
        }
        for label in &mut self.labels {
            label.group_id = groups.get(&label.code).copied();
        }
        self
    }

    /// Writes the corpus back out in the same TSV layout it is read from.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for inst in &self.instances {
            writeln!(out, "{}\t{}", inst.text, inst.label.code)?;
        }
        Ok(())
    }
}

fn dedup_by_code(labels: BTreeSet<Label>) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::with_capacity(labels.len());
    for l in labels {
        if out.last().is_none_or(|p| p.code != l.code) {
            out.push(l);
        }
    }
    out
}

/// Reads a `text<TAB>label` corpus file.
pub fn read_tsv(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    parse_tsv(&bytes)
}

pub fn parse_tsv(bytes: &[u8]) -> Result<Corpus> {
    let mut instances = Vec::new();
    for (i, raw) in split_lines(bytes).enumerate() {
        let line_no = i + 1;
        let line = std::str::from_utf8(raw).map_err(|_| Error::Decode { line: line_no })?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.split('\t');
        let (text, code) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(c), None) => (t, c),
            _ => {
                return Err(Error::Format {
                    line: line_no,
                    message: format!(
                        "expected exactly one TAB, found {}",
                        line.matches('\t').count()
                    ),
                })
            }
        };
        if text.is_empty() {
            return Err(Error::Format {
                line: line_no,
                message: "empty text field".into(),
            });
        }
        let label = Label::new(code).map_err(|e| Error::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        instances.push(Instance {
            text: text.to_owned(),
            label,
        });
    }
    Ok(Corpus::from_instances(instances))
}

/// Splits on `\n`, dropping the empty piece after a final terminator.
fn split_lines(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = bytes.is_empty();
    body.split(|&b| b == b'\n').filter(move |_| !empty)
}

/// Reads a `label<TAB>group_id` file.
pub fn read_groups(path: impl AsRef<Path>) -> Result<BTreeMap<String, u32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    parse_groups(&bytes)
}

pub fn parse_groups(bytes: &[u8]) -> Result<BTreeMap<String, u32>> {
    let mut groups = BTreeMap::new();
    for (i, raw) in split_lines(bytes).enumerate() {
        let line_no = i + 1;
        let line = std::str::from_utf8(raw).map_err(|_| Error::Decode { line: line_no })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (code, group) = line.split_once('\t').ok_or_else(|| Error::Format {
            line: line_no,
            message: "expected label<TAB>group_id".into(),
        })?;
        validate_code(code).map_err(|e| Error::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        let group: u32 = group.trim().parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("group id {group:?} is not an integer"),
        })?;
        groups.insert(code.to_owned(), group);
    }
    Ok(groups)
}

/// Dense character ↔ index map with a reserved unknown slot at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Charset {
    /// Builds a charset from known characters; the UNK slot is appended.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::Config(format!("duplicate character {c:?} in charset")));
            }
        }
        Ok(Charset { chars, index })
    }

    /// Number of slots including UNK.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn unk_index(&self) -> usize {
        self.chars.len()
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.chars.len())
    }

    /// Known characters in index order, excluding UNK.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.chars.get(index).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.lookup(c)).collect()
    }

    /// Stable fingerprint of the character list, used for compatibility checks.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for &c in &self.chars {
            h.update((c as u32).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Collects the characters of `corpus` ordered by (frequency desc, codepoint asc).
///
/// With `max_size`, at most `max_size - 1` characters are kept so the total
/// including UNK never exceeds the cap.
pub fn build_charset(corpus: &Corpus, max_size: Option<usize>) -> Result<Charset> {
    if let Some(cap) = max_size {
        if cap < 2 {
            return Err(Error::Config(format!(
                "charset max_size must be at least 2, got {cap}"
            )));
        }
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<char, u64> = HashMap::new();
    for inst in corpus.instances() {
        for c in inst.text.chars() {
            *freq.entry(c).or_default() += 1;
        }
    }
    let mut ranked: Vec<(char, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(cap) = max_size {
        ranked.truncate(cap - 1);
    }
    Charset::from_chars(ranked.into_iter().map(|(c, _)| c).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    pub avg_chars: f64,
    pub avg_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub per_label: BTreeMap<String, LabelStats>,
    pub totals: LabelStats,
}

#[derive(Serialize)]
struct StatsRow<'a> {
    label: &'a str,
    count: usize,
    avg_chars: f64,
    avg_tokens: f64,
}

impl CorpusStats {
    /// Per-label rows followed by a `TOTAL` row.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<StatsRow> = self
            .per_label
            .iter()
            .map(|(k, s)| (k.as_str(), s))
            .chain(std::iter::once(("TOTAL", &self.totals)))
            .map(|(label, s)| StatsRow {
                label,
                count: s.count,
                avg_chars: s.avg_chars,
                avg_tokens: s.avg_tokens,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_label
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>10}  {:>10}  {:>10}\n",
            "label", "count", "avg_chars", "avg_tokens"
        );
        let rows = self
            .per_label
            .iter()
            .map(|(k, s)| (k.as_str(), s))
            .chain(std::iter::once(("TOTAL", &self.totals)));
        for (label, s) in rows {
            out.push_str(&format!(
                "{:<width$}  {:>10}  {:>10.2}  {:>10.2}\n",
                label, s.count, s.avg_chars, s.avg_tokens
            ));
        }
        out
    }
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    #[derive(Default)]
    struct Acc {
        n: usize,
        chars: u64,
        tokens: u64,
    }
    impl Acc {
        fn finish(&self) -> LabelStats {
            if self.n == 0 {
                return LabelStats::default();
            }
            LabelStats {
                count: self.n,
                avg_chars: self.chars as f64 / self.n as f64,
                avg_tokens: self.tokens as f64 / self.n as f64,
            }
        }
    }

    let mut per: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    for inst in corpus.instances() {
        let chars = inst.text.chars().count() as u64;
        let tokens = inst.text.split_whitespace().count() as u64;
        let acc = per.entry(inst.label.code.as_str()).or_default();
        for a in [acc, &mut total] {
            a.n += 1;
            a.chars += chars;
            a.tokens += tokens;
        }
    }
    CorpusStats {
        per_label: per
            .into_iter()
            .map(|(k, a)| (k.to_owned(), a.finish()))
            .collect(),
        totals: total.finish(),
    }
}

/// Seeded stratified split. Each label's instances are shuffled and cut by
/// largest-remainder rounding, then topped up so no part is left without
/// the label. Instances keep file order inside each part.
pub fn split(corpus: &Corpus, fractions: &[f64], seed: u64) -> Result<Vec<Corpus>> {
    if fractions.is_empty() {
        return Err(Error::Config("no split fractions given".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
    }

    let parts = fractions.len();
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances().iter().enumerate() {
        by_label.entry(inst.label.code.as_str()).or_default().push(i);
    }

    let mut assignment = vec![0usize; corpus.len()];
    for (label_no, (code, mut idx)) in by_label.into_iter().enumerate() {
        if idx.len() < parts {
            return Err(Error::Stratification {
                label: code.to_owned(),
                count: idx.len(),
                parts,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label_no as u64);
        idx.shuffle(&mut rng);

        let sizes = apportion(idx.len(), fractions);
        let mut start = 0;
        for (part, size) in sizes.into_iter().enumerate() {
            for &i in &idx[start..start + size] {
                assignment[i] = part;
            }
            start += size;
        }
    }

    let mut out: Vec<Vec<Instance>> = vec![Vec::new(); parts];
    for (inst, part) in corpus.instances().iter().zip(assignment) {
        out[part].push(inst.clone());
    }
    Ok(out.into_iter().map(Corpus::from_instances).collect())
}

fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    // no part may come out empty; move one instance from the part with the
    // largest surplus over its exact share
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let donor = (0..sizes.len())
            .filter(|&j| sizes[j] > 1)
            .max_by(|&a, &b| (sizes[a] as f64 - exact[a]).total_cmp(&(sizes[b] as f64 - exact[b])).then(b.cmp(&a)))
            .expect("total >= parts");
        sizes[donor] -= 1;
        sizes[empty] += 1;
    }
    sizes
}
