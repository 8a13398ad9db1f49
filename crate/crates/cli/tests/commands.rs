use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posebert::io::read_pseq;
use posebert::train::Checkpoint;

const TINY: &str = r#"
[gen]
num_sequences = 10
duration = [20, 30]

[model]
seq_len = 8
dim = 16
layers = 1
heads = 2
ffn_dim = 16
regressor_hidden = 16

[train]
batch_size = 2
max_steps = 4
eval_every = 2
val_windows = 4
"#;

fn posebert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posebert"))
        .args(args)
        .env("POSEBERT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = posebert(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.toml"), config).unwrap();
        Setup { dir }
    }
    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn generate(&self) {
        ok(&["generate", "--config", s(&self.p("cfg.toml")), "--out", s(&self.p("data"))]);
    }
    fn train(&self, out: &str) {
        ok(&["train", "--config", s(&self.p("cfg.toml")), "--data", s(&self.p("data")), "--out", s(&self.p(out))]);
    }
}

#[test]
fn generate_writes_corpus_and_is_reproducible() {
    let a = Setup::new(TINY);
    a.generate();
    let files: Vec<_> = std::fs::read_dir(a.p("data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 11);
    assert_eq!(files.iter().filter(|f| f.to_str().unwrap().ends_with(".pseq.json")).count(), 10);
    ok(&["generate", "--config", s(&a.p("cfg.toml")), "--out", s(&a.p("again"))]);
    for f in &files {
        assert_eq!(std::fs::read(a.p("data").join(f)).unwrap(), std::fs::read(a.p("again").join(f)).unwrap());
    }
    ok(&["generate", "--config", s(&a.p("cfg.toml")), "--out", s(&a.p("other")), "--seed", "5"]);
    assert_ne!(
        std::fs::read(a.p("data").join("seq_00000.pseq.json")).unwrap(),
        std::fs::read(a.p("other").join("seq_00000.pseq.json")).unwrap()
    );
}

#[test]
fn malformed_config_fails_with_one_line() {
    let a = Setup::new("[model]\nseq_len = \"long\"\n");
    let out = posebert(&["generate", "--config", s(&a.p("cfg.toml")), "--out", s(&a.p("data"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
    assert!(!a.p("data").exists());
}

#[test]
fn zero_step_training_writes_loadable_checkpoint() {
    let a = Setup::new(&TINY.replace("max_steps = 4", "max_steps = 0"));
    a.generate();
    a.train("m.ckpt");
    let ck = Checkpoint::load(&a.p("m.ckpt")).unwrap();
    assert_eq!(ck.step(), 0);
    assert_eq!(ck.model_config.seq_len, 8);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full = Setup::new(TINY);
    full.generate();
    full.train("full.ckpt");
    std::fs::write(full.p("half.toml"), TINY.replace("max_steps = 4", "max_steps = 2")).unwrap();
    ok(&["train", "--config", s(&full.p("half.toml")), "--data", s(&full.p("data")), "--out", s(&full.p("half.ckpt"))]);
    assert_eq!(Checkpoint::load(&full.p("half.ckpt")).unwrap().step(), 2);
    ok(&[
        "train",
        "--config",
        s(&full.p("cfg.toml")),
        "--data",
        s(&full.p("data")),
        "--out",
        s(&full.p("resumed.ckpt")),
        "--resume",
        s(&full.p("half.ckpt")),
        "--log",
        s(&full.p("half.ckpt.log.jsonl")),
    ]);
    assert_eq!(std::fs::read(full.p("full.ckpt")).unwrap(), std::fs::read(full.p("resumed.ckpt")).unwrap());
    let log = std::fs::read_to_string(full.p("half.ckpt.log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![2, 4]);
}

#[test]
fn training_without_data_fails() {
    let a = Setup::new(TINY);
    let out = posebert(&["train", "--config", s(&a.p("cfg.toml")), "--data", s(&a.p("missing")), "--out", s(&a.p("m.ckpt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    assert!(!a.p("m.ckpt").exists());
}

fn report_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn eval_report_layout_and_determinism() {
    let a = Setup::new(TINY);
    a.generate();
    a.train("m.ckpt");
    let args = |report: &str, extra: &[&str]| {
        let mut v = vec!["eval", "--ckpt", s(&a.p("m.ckpt")), "--data", s(&a.p("data")), "--report"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        v.push(s(&a.p(report)).to_string());
        v.extend(extra.iter().map(|x| x.to_string()));
        v
    };
    let run = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    run(args("r1.csv", &[]));
    run(args("r2.csv", &[]));
    assert_eq!(std::fs::read(a.p("r1.csv")).unwrap(), std::fs::read(a.p("r2.csv")).unwrap());
    let text = std::fs::read_to_string(a.p("r1.csv")).unwrap();
    assert!(text.starts_with(posebert::metrics::CSV_HEADER));
    let rows = report_rows(&a.p("r1.csv"));
    // one test sequence out of ten, plus one aggregate row per method
    assert_eq!(rows.len(), 4 * 2);
    for m in ["model", "nearest_fill", "savgol", "median"] {
        assert_eq!(rows.iter().filter(|r| r[0] == m && r[1] == "ALL").count(), 1);
    }
    run(args("clean.csv", &["--mask-ratio", "0", "--noise", "0"]));
    for r in report_rows(&a.p("clean.csv")).iter().filter(|r| r[0] == "nearest_fill") {
        assert_eq!(&r[2..4], &["0.0000".to_string(), "0.0000".to_string()]);
    }
}

#[test]
fn infer_tasks() {
    let a = Setup::new(TINY);
    a.generate();
    a.train("m.ckpt");
    let input = a.p("data").join("seq_00000.pseq.json");
    let n = read_pseq(&input).unwrap().len();
    let infer = |task: &str, out: &str, extra: &[&str]| {
        let ckpt = a.p("m.ckpt");
        let mut v = vec!["infer", "--ckpt", s(&ckpt), "--task", task, "--in", s(&input), "--out"];
        let o = a.p(out);
        v.push(s(&o));
        v.extend_from_slice(extra);
        ok(&v);
        o
    };
    let refined = infer("refine", "r.pseq.json", &[]);
    assert_eq!(read_pseq(&refined).unwrap().len(), n);
    let completed = infer("complete", "c.pseq.json", &[]);
    assert_eq!(std::fs::read(&refined).unwrap(), std::fs::read(&completed).unwrap());
    let fut = infer("future", "f.pseq.json", &["--observed", "3", "--horizon", "5"]);
    assert_eq!(read_pseq(&fut).unwrap().len(), 5);
    let out = posebert(&[
        "infer", "--ckpt", s(&a.p("m.ckpt")), "--task", "future", "--in", s(&input), "--out", s(&a.p("bad.json")),
        "--observed", "6", "--horizon", "5",
    ]);
    assert!(!out.status.success());
    assert!(!a.p("bad.json").exists());
}

#[test]
fn study_writes_both_tables() {
    let a = Setup::new(TINY);
    a.generate();
    a.train("m.ckpt");
    ok(&[
        "study", "--ckpt", s(&a.p("m.ckpt")), "--data", s(&a.p("data")), "--drops", "0,0.5", "--report", s(&a.p("s.csv")),
    ]);
    let rows = report_rows(&a.p("s.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r[0] == "savgol" && r[1] == "drop=0.50"));
    let gains = std::fs::read_to_string(a.p("s.csv.gains.csv")).unwrap();
    assert_eq!(gains.lines().count(), 3);
    assert!(gains.starts_with("fraction,"));
}
