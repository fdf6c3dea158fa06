use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn suq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_suq")).args(args).output().unwrap()
}

fn synth(dir: &Path) -> String {
    let config = dir.join("synth.json");
    fs::write(
        &config,
        r#"{
  "dataset_name": "cli",
  "n_subjects": 3,
  "subject": {"dims": [24, 24], "seed": 12},
  "declared_T": 4,
  "declared_K": 3,
  "methods": [
    {"name": "softmax", "kind": "single_prob"},
    {"name": "mc", "kind": "sample_stack", "curve": {"type": "shift", "delta": 0.1}},
    {"name": "aux", "kind": "auxiliary", "uncertainty": "error_indicator"}
  ]
}"#,
    )
    .unwrap();
    let data = dir.join("data");
    let out = suq(&["synth", config.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.json").to_str().unwrap().to_string()
}

#[test]
fn synth_evaluate_rank_diagram() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let results = dir.path().join("results");
    let out = suq(&["evaluate", &manifest, "--out", results.to_str().unwrap(), "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "sweep.csv", "ranks.csv", "summary.json", "diagrams/mc__ALL.csv", "diagrams/aux__S003.csv"] {
        assert!(results.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(results.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("method,subject_id,status,ece,ece_pooled,"));
    assert_eq!(metrics.lines().count(), 1 + 3 * 4);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(results.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n_bins"], 10);
    assert_eq!(summary["config"]["tau_grid"].as_array().unwrap().len(), 19);
    assert!(summary["config"].get("workers").is_none());

    let rank = suq(&["rank", results.to_str().unwrap()]);
    assert!(rank.status.success());
    assert_eq!(String::from_utf8(rank.stdout).unwrap(), fs::read_to_string(results.join("ranks.csv")).unwrap());

    let diagram = suq(&["diagram", &manifest, "--method", "aux", "--subject", "S003"]);
    assert!(diagram.status.success(), "{}", String::from_utf8_lossy(&diagram.stderr));
    assert_eq!(
        String::from_utf8(diagram.stdout).unwrap(),
        fs::read_to_string(results.join("diagrams/aux__S003.csv")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let config = dir.path().join("eval.json");
    fs::write(&config, r#"{"n_bins": 5, "epsilon": 0.05, "tau_grid": [0.5]}"#).unwrap();
    let results = dir.path().join("r");
    let out = suq(&[
        "evaluate",
        &manifest,
        "--out",
        results.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--bins",
        "20",
        "--tau-grid",
        "0.1:0.3:0.1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(results.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n_bins"], 20);
    assert_eq!(summary["config"]["epsilon"], 0.05);
    assert_eq!(summary["config"]["tau_grid"], serde_json::json!([0.1, 0.2, 0.3]));
}

#[test]
fn reports_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let a = dir.path().join("w1");
    let b = dir.path().join("w4");
    assert!(suq(&["evaluate", &manifest, "--out", a.to_str().unwrap(), "--workers", "1"]).status.success());
    assert!(suq(&["evaluate", &manifest, "--out", b.to_str().unwrap(), "--workers", "4"]).status.success());
    for f in ["metrics.csv", "sweep.csv", "ranks.csv", "summary.json", "diagrams/mc__S001.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn subject_failure_gives_exit_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    fs::write(dir.path().join("data/S002_softmax_prob.suqt"), b"not a tensor").unwrap();
    let results = dir.path().join("r");
    let out = suq(&["evaluate", &manifest, "--out", results.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("S002"));
    let metrics = fs::read_to_string(results.join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("softmax,S002,skipped,")));
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = suq(&["evaluate", "/nonexistent/manifest.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let manifest = synth(dir.path());
    let out = suq(&["evaluate", &manifest, "--out", dir.path().join("x").to_str().unwrap(), "--tau-grid", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = suq(&["diagram", &manifest, "--method", "missing"]);
    assert_eq!(out.status.code(), Some(1));
}
