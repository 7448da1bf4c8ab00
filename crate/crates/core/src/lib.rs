//! Discriminating similar languages and national varieties from raw
//! character streams.
//!
//! Two classifiers share one character inventory ([`corpus::Charset`]):
//!
//! * [`ngram::NgramModel`], a per-label character Markov model with additive
//!   smoothing;
//! * [`clstm::ClstmModel`], a one-hot ConvNet feeding a bidirectional LSTM,
//!   trained with the tape in [`nn`].
//!
//! [`metrics`] scores either one: accuracy, micro/macro/weighted F1,
//! per-class scores, confusion matrices and the within/cross-group error
//! split.

pub mod clstm;
pub mod corpus;
mod envelope;
pub mod error;
pub mod io;
pub mod metrics;
pub mod ngram;
pub mod nn;
pub mod scores;
pub mod synthetic;

pub use corpus::{build_charset, compute_stats, read_tsv, split, Charset, Corpus, CorpusStats, Instance, Label};
pub use envelope::magic_of;
pub use error::{Error, Result};
pub use metrics::{confusion, render, report, ConfusionMatrix, EvalReport, ReportFormat};
pub use ngram::{sweep, NgramConfig, NgramModel, SweepRow};
pub use scores::Scores;
