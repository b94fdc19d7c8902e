use std::path::Path;
use std::process::{Command, Output};

fn simulmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulmt")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_corpus_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert_eq!(code(&simulmt(&["gen-corpus", "--seed", "1", "--out", path(&a)])), 0);
    assert_eq!(code(&simulmt(&["gen-corpus", "--seed", "1", "--out", path(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("model.json")).unwrap(),
        std::fs::read(b.with_extension("model.json")).unwrap()
    );
}

#[test]
fn gen_corpus_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    assert_eq!(code(&simulmt(&["gen-corpus", "--out", path(&out)])), 0);
    let again = simulmt(&["gen-corpus", "--out", path(&out)]);
    assert_ne!(code(&again), 0);
    assert!(!again.stderr.is_empty());
    assert_eq!(code(&simulmt(&["gen-corpus", "--force", "--out", path(&out)])), 0);
}

#[test]
fn empty_corpus_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.jsonl");
    let res = simulmt(&["gen-corpus", "--count", "0", "--out", path(&out)]);
    assert_eq!(code(&res), 0);
    assert!(std::fs::read(&out).unwrap().is_empty());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[corpus]\nmin_len = 9\nmax_len = 2\n").unwrap();
    let res = simulmt(&["gen-corpus", "--config", path(&cfg), "--out", path(&dir.path().join("x.jsonl"))]);
    assert_eq!(code(&res), 1);
    assert!(!res.stderr.is_empty());
}

#[test]
fn empty_sweep_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "[sweep]\ndeltas = []\n").unwrap();
    let res = simulmt(&["sweep", "--config", path(&cfg), "--out", path(&dir.path().join("s.csv"))]);
    assert_eq!(code(&res), 1);
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = simulmt(&[
        "pipeline",
        "--corpus",
        path(&dir.path().join("nope.jsonl")),
        "--out-dir",
        path(&dir.path().join("run")),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&simulmt(&["--help"])), 0);
    assert_eq!(code(&simulmt(&["--version"])), 0);
    assert_eq!(code(&simulmt(&["sweep", "--no-such-flag"])), 1);
}

#[test]
fn corpus_policy_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let policy = dir.path().join("policy.json");
    let run = dir.path().join("run");
    assert_eq!(code(&simulmt(&["gen-corpus", "--count", "40", "--out", path(&corpus)])), 0);
    assert_eq!(code(&simulmt(&["gen-labels", "--corpus", path(&corpus), "--out", path(&dir.path().join("labels.jsonl"))])), 0);
    assert_eq!(code(&simulmt(&["train-policy", "--corpus", path(&corpus), "--out", path(&policy)])), 0);
    let res = simulmt(&[
        "pipeline",
        "--corpus",
        path(&corpus),
        "--policy",
        path(&policy),
        "--delta",
        "1.0",
        "--out-dir",
        path(&run),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["bleu"], 100.0);
    assert_eq!(summary["n_sentences"], 40);
    assert!(run.join("traces.jsonl").exists());
    let report = simulmt(&["report", path(&run)]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("bleu"));
}

#[test]
fn sweep_rows_are_ordered_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let res = simulmt(&[
        "sweep",
        "--wait-k",
        "2",
        "--deltas",
        "0.9,0.5",
        "--beams",
        "3,1",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let body = std::fs::read_to_string(&out).unwrap();
    let keys: Vec<(String, String)> = body
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let want = [("0.5", "1"), ("0.5", "3"), ("0.9", "1"), ("0.9", "3")];
    assert_eq!(keys.len(), want.len());
    for ((d, b), (wd, wb)) in keys.iter().zip(want) {
        assert_eq!(d.parse::<f64>().unwrap(), wd.parse::<f64>().unwrap());
        assert_eq!(b, wb);
    }
    assert_eq!(code(&simulmt(&["report", path(&out)])), 0);
}

#[test]
fn monotone_check_passes_on_trained_policy() {
    let dir = tempfile::tempdir().unwrap();
    let res = simulmt(&[
        "sweep",
        "--deltas",
        "0.5,0.75,1.0",
        "--beams",
        "1",
        "--check-monotone",
        "--out",
        path(&dir.path().join("m.csv")),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
}
