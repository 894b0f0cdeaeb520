//! End-to-end checks of the `rcpa` binary: exit codes, output shape, and
//! artifact writing. The demo subcommand is exercised indirectly through
//! `run`, which shares its implementation but accepts a small config.

use std::process::{Command, Output};

fn rcpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcpa")).args(args).output().expect("spawn rcpa")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// A config small enough for a sub-second full run.
const SMALL_CONFIG: &str = r#"{
  "scenario": { "source_corpus_size": 400, "target_train_size": 32, "target_test_size": 8 },
  "curriculum": { "total_steps": 64 },
  "train": { "group_size": 8 },
  "seeds": [0],
  "strategies": ["sft"]
}"#;

#[test]
fn help_and_version_exit_zero() {
    let help = rcpa(&["--help"]);
    assert!(help.status.success());
    assert!(stdout(&help).contains("Usage"));
    let version = rcpa(&["--version"]);
    assert!(version.status.success());
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = rcpa(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).to_lowercase().contains("usage"));
}

#[test]
fn schedule_prints_both_phase_endpoints() {
    let out = rcpa(&["schedule", "--steps", "1600", "--sigma", "16"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("pre-alignment occupies 100 steps"), "missing boundary: {text}");
    assert!(text.contains("0.7000"), "missing starting threshold: {text}");
    assert!(text.contains("0.8000"), "missing final threshold: {text}");
}

#[test]
fn schedule_rejects_a_degenerate_sigma() {
    let out = rcpa(&["schedule", "--steps", "1600", "--sigma", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn score_reports_a_perfect_match() {
    let out = rcpa(&[
        "score",
        "--candidate",
        "17,17,18,18,17,20",
        "--reference",
        "17,17,18,18,17,20",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("similarity 1.000000"), "unexpected output: {text}");
    assert!(text.contains("reward +1"), "unexpected output: {text}");
}

#[test]
fn score_reports_a_failing_truncation() {
    let out = rcpa(&["score", "--candidate", "17,17", "--reference", "17,17,18,18,17,20"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("reward -1"), "unexpected output: {}", stdout(&out));
}

#[test]
fn score_rejects_out_of_range_tokens() {
    let out = rcpa(&["score", "--candidate", "99", "--reference", "17"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("out of range"), "stderr: {}", stderr(&out));
}

#[test]
fn run_executes_a_small_config_and_writes_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let output_dir = dir.path().join("runs");
    let mut config: serde_json::Value = serde_json::from_str(SMALL_CONFIG).unwrap();
    config["output_dir"] = serde_json::Value::String(output_dir.display().to_string());
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let out = rcpa(&["run", config_path.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let printed: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("summary JSON");
    assert!(printed.get("sft").is_some(), "summary missing strategy: {printed}");
    let on_disk = std::fs::read_to_string(output_dir.join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&on_disk).unwrap();
    assert_eq!(parsed, printed);
    assert!(output_dir.join("sft_0.csv").exists());
    assert!(output_dir.join("dataset_train.jsonl").exists());
}

#[test]
fn run_rejects_a_malformed_config_with_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("broken.json");
    std::fs::write(&config_path, "{\n  \"seeds\": [0,\n}").unwrap();
    let out = rcpa(&["run", config_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stderr(&out);
    assert!(text.contains("line"), "stderr should cite the position: {text}");
}

#[test]
fn run_rejects_invalid_field_values() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad_values.json");
    std::fs::write(&config_path, r#"{"train": {"clip_eps": 2.0}}"#).unwrap();
    let out = rcpa(&["run", config_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_reports_a_missing_config_file() {
    let out = rcpa(&["run", "/nonexistent/config.json"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!stderr(&out).is_empty());
}
