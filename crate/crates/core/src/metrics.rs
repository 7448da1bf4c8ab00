//! Confusion matrices, accuracy and the F1 family, group-level error split,
//! and report rendering.
//!
//! Empty classes follow the zero-division convention: precision, recall and
//! F1 are 0 when their denominator is 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// `cells[i][j]` counts gold label `i` predicted as label `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<Label>,
    cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<Label>, cells: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if cells.len() != k || cells.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion matrix must be {k}x{k}")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.code.as_str())) {
            return Err(Error::Config(format!("duplicate label {}", dup.code)));
        }
        Ok(ConfusionMatrix { labels, cells })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.cells[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.cells[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.cells.iter().map(|r| r[j]).sum()
    }

    /// Attaches group ids by label code; unmapped labels end up ungrouped.
    pub fn with_groups(mut self, groups: &BTreeMap<String, u32>) -> Self {
        for l in &mut self.labels {
            l.group_id = groups.get(&l.code).copied();
        }
        self
    }

    /// Parses the matrix fixture layout: a header row of label codes, then one
    /// row of integer cells per gold label in header order. A row may start
    /// with its own label code (which must match), in which case the header
    /// may start with an empty or `gold` cell. Blank cells count as 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format {
            line: 1,
            message: "missing header row".into(),
        })?;
        let mut codes: Vec<&str> = header.split(',').map(str::trim).collect();
        let labelled_rows = matches!(codes.first(), Some(&"") | Some(&"gold"));
        if labelled_rows {
            codes.remove(0);
        }
        let labels = codes
            .iter()
            .map(|c| Label::new(*c))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format { line: 1, message: e.to_string() })?;
        let k = labels.len();
        let mut cells = Vec::with_capacity(k);
        for (line, row) in lines {
            let mut fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() == k + 1 {
                let code = fields.remove(0);
                let expected = labels.get(cells.len()).map(|l| l.code.as_str());
                if Some(code) != expected {
                    return Err(Error::Format {
                        line,
                        message: format!("row label {code:?} out of header order"),
                    });
                }
            }
            if fields.len() != k {
                return Err(Error::Format {
                    line,
                    message: format!("expected {k} cells, found {}", fields.len()),
                });
            }
            let row = fields
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(0)
                    } else {
                        f.parse::<u64>().map_err(|_| Error::Format {
                            line,
                            message: format!("cell {f:?} is not a non-negative integer"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(row);
        }
        if cells.len() != k {
            return Err(Error::Format {
                line: 1,
                message: format!("expected {k} gold rows, found {}", cells.len()),
            });
        }
        Self::from_counts(labels, cells)
    }

    /// Inverse of [`ConfusionMatrix::from_csv`] (unlabelled rows).
    pub fn to_csv(&self) -> String {
        let mut s = self.labels.iter().map(|l| l.code.as_str()).collect::<Vec<_>>().join(",");
        s.push('\n');
        for row in &self.cells {
            s.push_str(&row.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// Counts `(gold, pred)` pairs over `labels`, in the order given.
pub fn confusion<S: AsRef<str>>(gold: &[S], pred: &[S], labels: &[Label]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() || gold.is_empty() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.code.as_str(), i)).collect();
    let find = |code: &str| index.get(code).copied().ok_or_else(|| Error::UnknownLabel(code.to_owned()));
    let k = labels.len();
    let mut cells = vec![vec![0u64; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        cells[find(g.as_ref())?][find(p.as_ref())?] += 1;
    }
    ConfusionMatrix::from_counts(labels.to_vec(), cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub within_group_errors: u64,
    pub cross_group_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassReport>,
    pub group_split: Option<GroupSplit>,
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn class(&self, code: &str) -> Option<&ClassReport> {
        self.per_class.iter().find(|c| c.label == code)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Derives every statistic from `cm`. With `groups`, off-diagonal mass is
/// split by whether gold and predicted labels share a group id; a label
/// absent from the map shares a group with nobody.
pub fn report(cm: &ConfusionMatrix, groups: Option<&BTreeMap<String, u32>>) -> EvalReport {
    let k = cm.labels.len();
    let total = cm.total();
    let trace = cm.trace();

    let per_class: Vec<ClassReport> = (0..k)
        .map(|i| {
            let tp = cm.cells[i][i];
            let precision = ratio(tp, cm.col_sum(i));
            let recall = ratio(tp, cm.row_sum(i));
            ClassReport {
                label: cm.labels[i].code.clone(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: cm.row_sum(i),
            }
        })
        .collect();

    // micro: pool TP/FP/FN over classes
    let fp: u64 = (0..k).map(|j| cm.col_sum(j) - cm.cells[j][j]).sum();
    let fn_: u64 = (0..k).map(|i| cm.row_sum(i) - cm.cells[i][i]).sum();
    let f1_micro = harmonic(ratio(trace, trace + fp), ratio(trace, trace + fn_));

    let f1_macro = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    let f1_weighted = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64
    };

    let group_split = groups.map(|g| {
        let gid: Vec<Option<u32>> = cm.labels.iter().map(|l| g.get(&l.code).copied()).collect();
        let mut split = GroupSplit {
            within_group_errors: 0,
            cross_group_errors: 0,
        };
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                match (gid[i], gid[j]) {
                    (Some(a), Some(b)) if a == b => split.within_group_errors += cm.cells[i][j],
                    _ => split.cross_group_errors += cm.cells[i][j],
                }
            }
        }
        split
    });

    EvalReport {
        accuracy: ratio(trace, total),
        f1_micro,
        f1_macro,
        f1_weighted,
        per_class,
        group_split,
        labels: cm.labels.iter().map(|l| l.code.clone()).collect(),
        matrix: cm.cells.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnknownFormat(other.to_owned())),
        }
    }
}

pub fn render(report: &EvalReport, cm: &ConfusionMatrix, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut s = String::from("gold,pred,count\n");
            for (i, g) in cm.labels.iter().enumerate() {
                for (j, p) in cm.labels.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{}", g.code, p.code, cm.cells[i][j]);
                }
            }
            Ok(s)
        }
        ReportFormat::Text => Ok(render_text(report, cm)),
    }
}

fn render_text(report: &EvalReport, cm: &ConfusionMatrix) -> String {
    // rows and columns ordered by group, ungrouped labels last
    let mut order: Vec<usize> = (0..cm.labels.len()).collect();
    order.sort_by_key(|&i| (cm.labels[i].group_id.is_none(), cm.labels[i].group_id, i));

    let code_w = cm.labels.iter().map(|l| l.code.chars().count()).max().unwrap_or(4).max(4);
    let cell_w = cm
        .cells
        .iter()
        .flatten()
        .map(|c| c.to_string().len())
        .max()
        .unwrap_or(1)
        .max(code_w);

    let mut s = String::new();
    let _ = write!(s, "{:>5}  {:<code_w$} ", "group", "gold");
    for &j in &order {
        let _ = write!(s, " {:>cell_w$}", cm.labels[j].code);
    }
    let _ = writeln!(s, "  {:>5}", "F1");

    let mut last_group = None;
    for (n, &i) in order.iter().enumerate() {
        let label = &cm.labels[i];
        let group = label.group_id;
        let show_group = n == 0 || group != last_group;
        if show_group && n != 0 {
            let _ = writeln!(s);
        }
        let g = match (show_group, group) {
            (true, Some(g)) => g.to_string(),
            (true, None) => "-".into(),
            (false, _) => String::new(),
        };
        last_group = group;
        let _ = write!(s, "{g:>5}  {:<code_w$} ", label.code);
        for &j in &order {
            let c = cm.cells[i][j];
            if c == 0 && i != j {
                let _ = write!(s, " {:>cell_w$}", "");
            } else {
                let _ = write!(s, " {c:>cell_w$}");
            }
        }
        let _ = writeln!(s, "  {:>5.2}", report.per_class[i].f1);
    }

    let _ = writeln!(s);
    let _ = writeln!(s, "accuracy     {:.4}", report.accuracy);
    let _ = writeln!(s, "f1_micro     {:.4}", report.f1_micro);
    let _ = writeln!(s, "f1_macro     {:.4}", report.f1_macro);
    let _ = writeln!(s, "f1_weighted  {:.4}", report.f1_weighted);
    if let Some(g) = report.group_split {
        let _ = writeln!(
            s,
            "errors       {} within group, {} across groups",
            g.within_group_errors, g.cross_group_errors
        );
    }
    s
}
