use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lident"));
    c.env_remove("LIDENT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOY: &str = "aaaa abab\tal\nbaba aab\tal\nabba baa\tal\nxyxy yyx\tzl\nyxx yxyx\tzl\nxxyy xy\tzl\n";

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.tsv"), TOY).unwrap();
    dir
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in ["", "train", "predict", "eval", "sweep", "stats"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let out = run(&args);
        assert!(out.status.success());
        let name = if sub.is_empty() { "lident" } else { sub };
        let path = golden.join(format!("{name}.help"));
        if update {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&path, &out.stdout).unwrap();
        } else {
            let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(stdout(&out), want, "{name} --help changed; rerun with UPDATE_GOLDEN=1");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let out = dir.path().join("m.lidn");
    let o = run(&["train", "--kind", "ngram", "--n", "0", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    // model-kind flag groups are exclusive
    let o = run(&["train", "--kind", "clstm", "--n", "3", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--kind", "ngram", "--epochs", "3", "--train", p(&train), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_predict() {
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let model = dir.path().join("m.lidn");
    let o = run(&["train", "--kind", "ngram", "--n", "2", "--train", p(&train), "--out", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("2 labels") && summary.contains("6 instances"), "{summary}");

    let o = run_stdin(&["predict", "--model", p(&model)], "abab\nyxyx\nbaab\n");
    assert_eq!(stdout(&o), "al\nzl\nal\n");

    let o = run_stdin(&["predict", "--model", p(&model), "--scores"], "abab\nyxyx\nbaab\n");
    for line in stdout(&o).lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        assert!(cols[1..].iter().all(|c| c.parse::<f64>().unwrap() < 0.0));
    }

    let o = run_stdin(&["predict", "--model", p(&model)], "");
    assert!(o.status.success());
    assert!(o.stdout.is_empty());

    let o = run(&["predict", "--model", p(&model), "--dump"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["n"], 2);

    let bogus = dir.path().join("bogus");
    fs::write(&bogus, b"NOPE0000").unwrap();
    assert_eq!(run(&["predict", "--model", p(&bogus)]).status.code(), Some(1));
}

#[test]
fn eval_paths() {
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let model = dir.path().join("m.lidn");
    assert!(run(&["train", "--kind", "ngram", "--n", "3", "--train", p(&train), "--out", p(&model)]).status.success());

    let o = run(&["eval", "--model", p(&model), "--gold", p(&train), "--format", "json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["accuracy"], 1.0);
    for c in json["per_class"].as_array().unwrap() {
        assert_eq!(c["f1"], 1.0);
    }

    let gold = dir.path().join("gold.tsv");
    fs::write(&gold, "abab\tal\nqqq\tmystery\n").unwrap();
    let o = run(&["eval", "--model", p(&model), "--gold", p(&gold)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mystery"));

    let o = run(&["eval", "--from-matrix", p(&fixture("ngram7_matrix.csv")), "--format", "xml"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["eval", "--from-matrix", p(&fixture("ngram7_matrix.csv")), "--format", "csv"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("gold,pred,count"));
    assert_eq!(text.lines().count(), 1 + 144);

    let out = dir.path().join("report.txt");
    let o = run(&[
        "eval",
        "--from-matrix",
        p(&fixture("ngram7_matrix.csv")),
        "--groups",
        p(&fixture("groups.tsv")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("accuracy     0.8845"));
    assert!(text.contains("within group"));
}

#[test]
fn sweep_and_stats() {
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let o = run(&["sweep", "--train", p(&train), "--dev", p(&train), "--n-min", "1", "--n-max", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,accuracy,model_table_entries,peak_memory_estimate");
    assert_eq!(lines.len(), 5);
    assert_eq!(stdout(&run(&["sweep", "--train", p(&train), "--dev", p(&train), "--n-max", "4"])), text);
    let o = run(&["sweep", "--train", p(&train), "--dev", p(&train), "--n-min", "4", "--n-max", "1"]);
    assert_eq!(o.status.code(), Some(1));

    let one = dir.path().join("one.tsv");
    fs::write(&one, "hello big world\ten\n").unwrap();
    let o = run(&["stats", p(&one), "--format", "json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json[0]["label"], "en");
    assert_eq!(json[0]["count"], 1);
    assert_eq!(json[0]["avg_chars"], 15.0);
    assert_eq!(json[0]["avg_tokens"], 3.0);
    assert!(run(&["stats", p(&one)]).status.success());
    assert_eq!(run(&["stats", p(&dir.path().join("missing.tsv"))]).status.code(), Some(1));
}

const TINY_CFG: &str = "\
# small network for fast runs
seq_len = 40
conv_features = 4
conv_kernels = 5,3,3
pool = 2
lstm_hidden = 3
dense_units = 8
epochs = 2
batch_size = 2
";

#[test]
fn clstm_training_is_reproducible() {
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let a = dir.path().join("a.lidc");
    let b = dir.path().join("b.lidc");
    let c = dir.path().join("c.lidc");
    let hist = dir.path().join("history.csv");
    let base = ["train", "--kind", "clstm", "--config", p(&cfg), "--train", p(&train)];
    let o = bin()
        .args(base)
        .args(["--seed", "1", "--dev", p(&train), "--history", p(&hist), "--out", p(&a)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bin().args(base).args(["--seed", "1", "--dev", p(&train), "--out", p(&b)]).status().unwrap().success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let history = fs::read_to_string(&hist).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(history.lines().next(), Some("epoch,train_loss,dev_accuracy"));

    // environment seed fallback
    let o = bin()
        .args(base)
        .args(["--dev", p(&train), "--out", p(&c)])
        .env("LIDENT_SEED", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let o = run_stdin(&["predict", "--model", p(&a), "--scores"], "abab\nxyxy\n");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn divergence_exits_two_without_output() {
    let dir = toy_dir();
    let train = dir.path().join("train.tsv");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let out = dir.path().join("m.lidc");
    let o = run(&[
        "train", "--kind", "clstm", "--config", p(&cfg), "--set", "lr=1e300", "--epochs", "5", "--train", p(&train),
        "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
    assert!(fs::read_dir(dir.path()).unwrap().count() == 2);
}
