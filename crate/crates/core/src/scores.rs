use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// Per-label scores for one input and the winning label.
///
/// `best` is the highest score; ties go to the lexicographically smallest code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub per_label: Vec<(Label, f64)>,
    pub best: Label,
}

impl Scores {
    /// Panics if `labels` is empty or the lengths differ.
    pub fn from_values(labels: &[Label], values: Vec<f64>) -> Self {
        assert_eq!(labels.len(), values.len(), "one score per label");
        let mut best = 0;
        for i in 1..labels.len() {
            let (v, bv) = (values[i], values[best]);
            if v > bv || (v == bv && labels[i].code < labels[best].code) {
                best = i;
            }
        }
        Scores {
            best: labels[best].clone(),
            per_label: labels.iter().cloned().zip(values).collect(),
        }
    }

    pub fn get(&self, code: &str) -> Option<f64> {
        self.per_label
            .iter()
            .find(|(l, _)| l.code == code)
            .map(|(_, v)| *v)
    }
}
