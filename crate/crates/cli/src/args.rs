use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lident", version, about = "Identify similar languages and national varieties in text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a TSV corpus (text<TAB>label per line)
    Train(TrainArgs),
    /// Label raw lines of text, one prediction per line
    Predict(PredictArgs),
    /// Score a model on gold data, or score a stored confusion matrix
    Eval(EvalArgs),
    /// Dev-set accuracy of n-gram models over a range of orders, as CSV
    Sweep(SweepArgs),
    /// Per-label instance counts and average lengths of a TSV corpus
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Ngram,
    Clstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model family
    #[arg(long, value_enum)]
    pub kind: Kind,

    /// Training corpus (TSV)
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,

    /// Output model file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Keep at most this many charset entries, UNK included
    #[arg(long, value_name = "N")]
    pub max_charset: Option<usize>,

    /// Random seed [default: 0]
    #[arg(long, env = "LIDENT_SEED")]
    pub seed: Option<u64>,

    /// [ngram] n-gram order [default: 7]
    #[arg(long, conflicts_with_all = ["config", "set", "dev", "history", "epochs"])]
    pub n: Option<usize>,

    /// [ngram] additive smoothing pseudo-count [default: 0.1]
    #[arg(long, conflicts_with_all = ["config", "set", "dev", "history", "epochs"])]
    pub alpha: Option<f64>,

    /// [clstm] key = value network and training settings
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// [clstm] override one setting, e.g. --set lr=0.01 (repeatable)
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// [clstm] number of epochs
    #[arg(long)]
    pub epochs: Option<usize>,

    /// [clstm] dev corpus (TSV) used to pick the best epoch
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    /// [clstm] write per-epoch loss and dev accuracy as CSV
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file (n-gram or CLSTM, detected from its header)
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Raw text, one instance per line [default: stdin]
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Output file [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Append per-label log-scores, one TSV column per label in model order
    #[arg(long, conflicts_with = "dump")]
    pub scores: bool,

    /// Print the model contents as JSON instead of predicting
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file to evaluate
    #[arg(long, value_name = "FILE", requires = "gold", conflicts_with = "from_matrix")]
    pub model: Option<PathBuf>,

    /// Gold corpus (TSV)
    #[arg(long, value_name = "FILE", requires = "model")]
    pub gold: Option<PathBuf>,

    /// Score a confusion matrix CSV (header of label codes, one row per gold label)
    #[arg(long, value_name = "FILE", required_unless_present = "model")]
    pub from_matrix: Option<PathBuf>,

    /// Language groups (label<TAB>group_id) for the within/cross-group error split
    #[arg(long, value_name = "FILE")]
    pub groups: Option<PathBuf>,

    /// Report format: text, json or csv
    #[arg(long, default_value = "text")]
    pub format: String,

    /// Output file [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training corpus (TSV)
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,

    /// Dev corpus (TSV)
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,

    /// Smallest order
    #[arg(long, default_value_t = 1)]
    pub n_min: usize,

    /// Largest order
    #[arg(long, default_value_t = 8)]
    pub n_max: usize,

    /// Additive smoothing pseudo-count
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Keep at most this many charset entries, UNK included
    #[arg(long, value_name = "N")]
    pub max_charset: Option<usize>,

    /// Output file [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus (TSV)
    pub input: PathBuf,

    /// Output format
    #[arg(long, value_enum, default_value_t = StatsFormat::Text)]
    pub format: StatsFormat,

    /// Output file [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
