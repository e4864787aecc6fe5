//! Integration tests against the compiled binary: exit codes, overwrite
//! guards, and the explain/report file contracts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multishap"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "out_dir": dir.join("work").display().to_string(),
        "seed": 3,
        "n_patients": 100,
        "prevalence_target": 0.2,
        "vitals_len_min": 8,
        "vitals_len_max": 12,
        "max_epochs": 2,
        "patience": 2,
        "n_samples": 10,
        "background_cap": 4,
        "global_cases": 3
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["generate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n_patiens": 5}"#).unwrap();
    let out = run(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_prevalence_is_data_error_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"out_dir": "{}", "prevalence_target": 0.0, "n_patients": 20}}"#,
            dir.path().join("w").display()
        ),
    )
    .unwrap();
    let out = run(&["generate", "--config", path.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!out.stderr.is_empty());
}

#[test]
fn preprocess_without_raw_data_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["preprocess", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn explain_without_target_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["explain", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_and_overwrite_guard() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let config = config.to_str().unwrap();
    let work = dir.path().join("work");

    let out = run(&["generate", "--config", config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(work.join("raw/static.csv").exists());
    assert!(work.join("raw/vitals.ndjson").exists());
    assert!(work.join("raw/ground_truth.json").exists());

    // rerunning without --force refuses; with --force succeeds
    let out = run(&["generate", "--config", config]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["generate", "--config", config, "--force"]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(&["preprocess", "--config", config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(work.join("processed/manifest.json").exists());

    let out = run(&["train", "--config", config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(work.join("model/head.json").exists());
    assert!(work.join("model/partition.json").exists());
    let metrics = std::fs::read_to_string(work.join("model/metrics.csv")).unwrap();
    assert!(metrics.starts_with("model,auc,precision,recall,f1\n"));

    // train refuses to overwrite the bundle without --force
    let out = run(&["train", "--config", config]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["eval", "--config", config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(work.join("eval/metrics.csv").exists());

    // pick a real patient id from the test split
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(work.join("model/split.json")).unwrap())
            .unwrap();
    let case = split["test"][0].as_str().unwrap().to_string();

    let out = run(&["explain", "--config", config, "--case", &case, "--global"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report_path = work.join(format!("explain/report_{case}.json"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    // additivity: modality ACs sum to prediction - base
    let sum_ac: f64 = report["modalities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["ac"].as_f64().unwrap())
        .sum();
    let gap = report["prediction"].as_f64().unwrap() - report["base_value"].as_f64().unwrap()
        - sum_ac;
    assert!(gap.abs() < 1e-9, "additivity gap {gap}");

    // relative contributions are normalized: global RC sums to 1
    let global = std::fs::read_to_string(work.join("explain/global.csv")).unwrap();
    assert!(global.starts_with("modality,mean_ac,sd_ac,mean_rc\n"));
    let rc_sum: f64 = global
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((rc_sum - 1.0).abs() < 1e-6, "global RC sums to {rc_sum}");

    // paper vs conserving reports differ only in the static_features section
    let conserving = report;
    let out = run(&[
        "explain", "--config", config, "--case", &case, "--mode", "paper", "--force",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let paper: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(paper["base_value"], conserving["base_value"]);
    assert_eq!(paper["prediction"], conserving["prediction"]);
    assert_eq!(paper["modalities"], conserving["modalities"]);
    assert_eq!(paper["mode"], "paper");
    assert_ne!(paper["static_features"], conserving["static_features"]);

    let out = run(&["report", "--config", config, "--case", &case, "--global", "--force"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let waterfall: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(work.join(format!("explain/waterfall_{case}.json"))).unwrap(),
    )
    .unwrap();
    let cumulative = waterfall["cumulative"].as_array().unwrap();
    let last = cumulative.last().unwrap().as_f64().unwrap();
    // the waterfall walks from base to prediction over modalities, then adds
    // the propagated static breakdown on top; last cumulative stays finite
    assert!(last.is_finite());
    assert!(work.join("explain/bars.json").exists());

    // explain on an unknown case id is a data error
    let out = run(&["explain", "--config", config, "--case", "nope", "--force"]);
    assert_eq!(out.status.code(), Some(2));
}
