//! Command-line behavior: exit codes, error reporting, stage composition and
//! reproducible outputs.

use std::path::Path;
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_attnaudit")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("spawn")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
          "seed": 3,
          "data": {"synthetic": {"n_docs": 60, "doc_len": 10, "vocab_size": 20,
                   "trigger_words": ["zephyr"], "seed": 0}},
          "encoder": {"kind": "projection", "embedding_dim": 8,
                      "hidden_size": 8, "attention_dim": 4},
          "train": {"max_epochs": 2, "batch_size": 16},
          "audit": {"n_perms": 10,
                    "adversarial": {"steps": 20, "restarts": 1},
                    "max_instances": 5}
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text: {stderr}");
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"seed": 1, "banana": true}"#).unwrap();
    let out = run(&["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[config]:"), "stderr: {stderr}");
    assert!(stderr.contains("banana"), "stderr: {stderr}");
}

#[test]
fn missing_prerequisite_stage_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[runtime]:"), "stderr: {stderr}");
    assert!(stderr.contains("gen-data"), "stderr: {stderr}");
}

#[test]
fn gen_data_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a/dataset.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/dataset.jsonl")).unwrap();
    assert_eq!(a, b);
    let va = std::fs::read(dir.path().join("a/vocab.json")).unwrap();
    let vb = std::fs::read(dir.path().join("b/vocab.json")).unwrap();
    assert_eq!(va, vb);
}

#[test]
fn staged_pipeline_matches_all_and_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let staged = dir.path().join("staged");
    for args in [
        vec!["gen-data"],
        vec!["build-vocab"],
        vec!["train"],
        vec!["train", "--attention", "none"],
        vec!["train-lr"],
        vec!["train-logodds"],
        vec!["audit", "gradients"],
        vec!["audit", "permute"],
        vec!["audit", "adversarial"],
        vec!["audit", "logodds"],
        vec!["report"],
    ] {
        let mut full = args.clone();
        let config_str = config.to_str().unwrap();
        let out_str = staged.to_str().unwrap();
        full.extend(["--config", config_str, "--out", out_str]);
        let out = run(&full);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    // Stage manifests carry the config hash and input hashes.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(staged.join("audit-permute.manifest.json")).unwrap(),
    )
    .unwrap();
    assert!(manifest["config_hash"].is_string());
    assert!(manifest["inputs"]["dataset.jsonl"].is_string());
    assert!(manifest["outputs"]["audit/permute.csv"].is_string());

    // The staged run reproduces `all` byte-for-byte.
    let all = dir.path().join("all");
    let out = run(&[
        "all",
        "--config",
        config.to_str().unwrap(),
        "--out",
        all.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for file in [
        "dataset.jsonl",
        "model_attentive.json",
        "audit/permute.csv",
        "tables/summary.csv",
    ] {
        let a = std::fs::read(staged.join(file)).unwrap();
        let b = std::fs::read(all.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between staged and all runs");
    }
}

#[test]
fn flag_overrides_reach_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let config_str = config.to_str().unwrap();
    let out_str = out_dir.to_str().unwrap();
    for args in [
        vec!["gen-data"],
        vec!["train"],
        vec!["audit", "adversarial", "--eps", "0.5", "--jobs", "2"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", config_str, "--out", out_str]);
        let out = run(&full);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    // A generous budget makes everything feasible.
    let csv = std::fs::read_to_string(out_dir.join("audit/adversarial.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with("true"), "infeasible row under eps=0.5: {line}");
    }
}
