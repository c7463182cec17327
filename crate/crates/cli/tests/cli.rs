use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn skytrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skytrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_explain_a_service_decision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = skytrace(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seed_dir = dir.path().join("seed-0");
    for f in ["curve.csv", "trace.jsonl", "goal.json", "links.csv", "checkpoint.bin"] {
        assert!(seed_dir.join(f).exists(), "missing {f}");
    }
    let curve = std::fs::read_to_string(seed_dir.join("curve.csv")).unwrap();
    assert!(curve.starts_with("episode,return,epsilon,loss_mean,greedy_return"));
    assert_eq!(curve.lines().count(), 5);

    let trace = seed_dir.join("trace.jsonl");
    let o = skytrace(&["explain", "why", "--trace", s(&trace), "--step", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("move"));

    let o = skytrace(&["explain", "why-not", "--trace", s(&trace), "--step", "0", "--action", "move=hover", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["query"], "why_not");

    let o = skytrace(&["explain", "validate", "--trace", s(&trace)]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn plan_writes_metrics_and_valid_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = skytrace(&[
        "plan", "--config", s(&cfg), "--out", s(dir.path()), "--profile", "tree-fast", "--intruders", "3",
        "--episodes", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("tree-fast M=3: 2 episodes"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let o = skytrace(&["validate", s(&dir.path().join("traces"))]);
    assert!(o.status.success(), "{}", stdout(&o));

    let trace = dir.path().join("traces").join("tree-fast-m3-seed0.jsonl");
    let o = skytrace(&["explain", "path", "--trace", s(&trace), "--episode", "0", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!v["steps"].as_array().unwrap().is_empty());
}

#[test]
fn corrupted_trace_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = dir.path().join("run");
    let o = skytrace(&[
        "plan", "--config", s(&cfg), "--out", s(&out), "--profile", "tree-fast", "--intruders", "2", "--episodes", "1",
    ]);
    assert!(o.status.success());
    let trace = out.join("traces").join("tree-fast-m2-seed0.jsonl");
    let text = std::fs::read_to_string(&trace).unwrap();
    let corrupt = text.replacen("\"visits\":", "\"visits\":1", 1);
    assert_ne!(corrupt, text);
    std::fs::write(&trace, corrupt).unwrap();
    let o = skytrace(&["explain", "validate", "--trace", s(&trace)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = skytrace(&["sweep", "--config", s(&cfg), "--out", s(&out), "--jobs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.csv", "episodes.csv", "stage1/seed-0/curve.csv", "stage1/seed-0/goal.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"]["metrics.csv"].is_string());
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    // 3 profiles × 2 intruder counts
    assert_eq!(metrics.lines().count(), 1 + 6);
}

#[test]
fn bad_input_is_reported() {
    let o = skytrace(&["plan", "--profile", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seeds = []\n").unwrap();
    let o = skytrace(&["validate", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    let o = skytrace(&["explain", "why", "--trace", s(&dir.path().join("missing.jsonl")), "--step", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    for cfg in [smoke_config(), desk] {
        let o = skytrace(&["validate", "--config", s(&cfg)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("config ok"));
    }
}
