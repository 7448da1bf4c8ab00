mod args;

use std::io::{Read, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use lident_core::clstm::{history_csv, ClstmConfig, ClstmModel, CHECKPOINT_MAGIC};
use lident_core::corpus::{build_charset, compute_stats, read_groups, read_tsv, Corpus};
use lident_core::io::write_atomic;
use lident_core::metrics::{confusion, render, report, ConfusionMatrix, ReportFormat};
use lident_core::ngram::{sweep, NgramConfig, NgramModel, MODEL_MAGIC};
use lident_core::{magic_of, Error, Scores};

use args::{Cli, Command, EvalArgs, Kind, PredictArgs, StatsArgs, StatsFormat, SweepArgs, TrainArgs};

/// Either a library failure or a usage problem found after parsing.
enum Failure {
    Lib(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Run = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

/// Writes to `out` atomically, or to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Run {
    match out {
        Some(path) => write_atomic(path, bytes)?,
        None => std::io::stdout().write_all(bytes).map_err(Error::from)?,
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::File {
        path: path.to_owned(),
        source: e,
    })
}

fn train(a: TrainArgs) -> Run {
    match a.kind {
        Kind::Ngram if a.config.is_some() || !a.set.is_empty() || a.epochs.is_some() || a.dev.is_some() || a.history.is_some() => {
            return Err(Failure::Usage("--config, --set, --epochs, --dev and --history need --kind clstm".into()));
        }
        Kind::Clstm if a.n.is_some() || a.alpha.is_some() => {
            return Err(Failure::Usage("--n and --alpha need --kind ngram".into()));
        }
        _ => {}
    }
    let ngram = NgramConfig {
        n: a.n.unwrap_or(7),
        alpha: a.alpha.unwrap_or(0.1),
    };
    if a.kind == Kind::Ngram {
        ngram.validate()?;
    }
    let start = Instant::now();
    let corpus = read_tsv(&a.train)?;
    let dev = a.dev.as_deref().map(read_tsv).transpose()?;
    let charset = build_charset(&corpus, a.max_charset)?;
    let (kind, bytes) = match a.kind {
        Kind::Ngram => {
            let model = NgramModel::train(&corpus, ngram, &charset)?;
            let bytes = model.to_bytes();
            write_atomic(&a.out, &bytes)?;
            ("ngram", bytes)
        }
        Kind::Clstm => {
            let mut config = match &a.config {
                Some(path) => {
                    let text = String::from_utf8(read_file(path)?)
                        .map_err(|_| Failure::Usage(format!("{}: not UTF-8", path.display())))?;
                    ClstmConfig::from_kv(&text)?
                }
                None => ClstmConfig::default(),
            };
            for kv in &a.set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                config.set(k.trim(), v.trim())?;
            }
            if let Some(e) = a.epochs {
                config.epochs = e;
            }
            if let Some(s) = a.seed {
                config.seed = s;
            }
            let dev = dev.unwrap_or_else(Corpus::default);
            let (model, history) = ClstmModel::train(&corpus, &dev, &charset, config)?;
            let bytes = model.to_bytes();
            write_atomic(&a.out, &bytes)?;
            if let Some(path) = &a.history {
                write_atomic(path, history_csv(&history).as_bytes())?;
            }
            ("clstm", bytes)
        }
    };
    println!(
        "trained {kind} model: {} labels, {} instances, {} bytes, {:.2}s",
        corpus.labels().len(),
        corpus.len(),
        bytes.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

enum Model {
    Ngram(NgramModel),
    Clstm(Box<ClstmModel>),
}

impl Model {
    fn load(path: &Path) -> Result<Model, Error> {
        let bytes = read_file(path)?;
        match magic_of(&bytes) {
            Some(m) if &m == MODEL_MAGIC => Ok(Model::Ngram(NgramModel::from_bytes(&bytes)?)),
            Some(m) if &m == CHECKPOINT_MAGIC => Ok(Model::Clstm(Box::new(ClstmModel::from_bytes(&bytes)?))),
            _ => Err(Error::Magic {
                expected: "LIDN or LIDC".into(),
                found: String::from_utf8_lossy(bytes.get(..4).unwrap_or(&bytes)).into_owned(),
            }),
        }
    }

    fn labels(&self) -> &[lident_core::Label] {
        match self {
            Model::Ngram(m) => m.labels(),
            Model::Clstm(m) => &m.labels,
        }
    }

    fn predict(&self, texts: &[&str]) -> Result<Vec<Scores>, Error> {
        match self {
            Model::Ngram(m) => Ok(texts.iter().map(|t| m.classify(t)).collect()),
            Model::Clstm(m) => m.predict(texts),
        }
    }

    fn dump(&self) -> Result<String, Error> {
        match self {
            Model::Ngram(m) => m.dump_json(),
            Model::Clstm(m) => {
                let params: Vec<_> = m
                    .params
                    .names()
                    .into_iter()
                    .zip(m.params.tensors())
                    .map(|(name, t)| serde_json::json!({ "name": name, "shape": t.shape() }))
                    .collect();
                let value = serde_json::json!({
                    "kind": "clstm",
                    "config": m.config.to_kv(),
                    "labels": m.labels.iter().map(|l| &l.code).collect::<Vec<_>>(),
                    "charset": m.charset.chars().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                    "parameters": params,
                });
                Ok(serde_json::to_string_pretty(&value)?)
            }
        }
    }
}

fn predict(a: PredictArgs) -> Run {
    let model = Model::load(&a.model)?;
    if a.dump {
        let mut s = model.dump()?;
        s.push('\n');
        return emit(a.out.as_deref(), s.as_bytes());
    }
    let raw = match &a.input {
        Some(path) => read_file(path)?,
        None => {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf).map_err(Error::from)?;
            buf
        }
    };
    let text = String::from_utf8(raw).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        Error::Decode { line }
    })?;
    let lines: Vec<&str> = text.lines().collect();
    let scores = model.predict(&lines)?;
    let mut out = String::new();
    for s in &scores {
        out.push_str(&s.best.code);
        if a.scores {
            for (_, v) in &s.per_label {
                out.push('\t');
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    emit(a.out.as_deref(), out.as_bytes())
}

fn eval(a: EvalArgs) -> Run {
    let format: ReportFormat = a.format.parse()?;
    let groups = a.groups.as_deref().map(read_groups).transpose()?;
    let cm = match (&a.from_matrix, &a.model, &a.gold) {
        (Some(path), _, _) => {
            let text = String::from_utf8(read_file(path)?)
                .map_err(|_| Failure::Usage(format!("{}: not UTF-8", path.display())))?;
            ConfusionMatrix::from_csv(&text)?
        }
        (None, Some(model), Some(gold)) => {
            let model = Model::load(model)?;
            let gold = read_tsv(gold)?;
            let texts: Vec<&str> = gold.instances().iter().map(|i| i.text.as_str()).collect();
            let pred: Vec<String> = model.predict(&texts)?.into_iter().map(|s| s.best.code).collect();
            let gold_codes: Vec<&str> = gold.instances().iter().map(|i| i.label.code.as_str()).collect();
            let pred_codes: Vec<&str> = pred.iter().map(|s| s.as_str()).collect();
            confusion(&gold_codes, &pred_codes, model.labels())?
        }
        _ => return Err(Failure::Usage("give --from-matrix, or --model with --gold".into())),
    };
    let cm = match &groups {
        Some(g) => cm.with_groups(g),
        None => cm,
    };
    let r = report(&cm, groups.as_ref());
    let mut s = render(&r, &cm, format)?;
    if !s.ends_with('\n') {
        s.push('\n');
    }
    emit(a.out.as_deref(), s.as_bytes())
}

fn run_sweep(a: SweepArgs) -> Run {
    if a.n_min > a.n_max {
        return Err(Failure::Usage(format!("--n-min {} exceeds --n-max {}", a.n_min, a.n_max)));
    }
    let train = read_tsv(&a.train)?;
    let dev = read_tsv(&a.dev)?;
    let charset = build_charset(&train, a.max_charset)?;
    let rows = sweep(&train, &dev, &charset, a.n_min, a.n_max, a.alpha)?;
    let mut s = String::from("n,accuracy,model_table_entries,peak_memory_estimate\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{},{}\n", r.n, r.accuracy, r.table_entries, r.memory_estimate));
    }
    emit(a.out.as_deref(), s.as_bytes())
}

fn stats(a: StatsArgs) -> Run {
    let corpus = read_tsv(&a.input)?;
    let st = compute_stats(&corpus);
    let mut s = match a.format {
        StatsFormat::Text => st.to_table(),
        StatsFormat::Json => st.to_json()?,
    };
    if !s.ends_with('\n') {
        s.push('\n');
    }
    emit(a.out.as_deref(), s.as_bytes())
}
