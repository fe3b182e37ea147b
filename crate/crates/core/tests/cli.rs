//! The `isf` binary end to end on a tiny toy experiment.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use isf::config::{ExperimentConfig, CONFIG_SCHEMA_VERSION};
use serde_json::Value;

const METRIC_KEYS: [&str; 7] = ["frs", "ppl", "pir", "diversity", "frechet", "mAcc", "flip_accuracy"];

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy("tiny", out);
    cfg.dataset.n_total = 80;
    let t = &mut cfg.train;
    t.total_iterations = 6;
    t.batch_size = 4;
    t.checkpoint_every = 3;
    t.arch.hidden = 32;
    t.arch.critic_base_channels = 8;
    t.arch.critic_resolution = Some(16);
    let p = &mut cfg.protocol;
    p.n_eval = 24;
    p.n_inputs = 4;
    p.n_samples = 3;
    p.n_paths = 4;
    p.path_steps = 4;
    p.n_frechet = 24;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg.to_value()).unwrap()).unwrap();
    path
}

fn isf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isf"))
        .args(args)
        .env_remove("ISF_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Config on disk plus a built dataset and a trained checkpoint.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("run");
    let cfg = write_config(dir, &tiny_config(&out));
    let c = cfg.to_str().unwrap();
    ok_json(isf(&["build-dataset", "--config", c]));
    ok_json(isf(&["train", "--config", c]));
    (cfg, out)
}

#[test]
fn train_then_evaluate_reports_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = trained(dir.path());
    assert!(out.join("train/checkpoints/final/manifest.json").exists());
    assert!(out.join("train/checkpoints/iter_00000003").is_dir());
    let v = ok_json(isf(&["evaluate", "--config", cfg.to_str().unwrap()]));
    for k in METRIC_KEYS {
        assert!(v["metrics"][k].as_f64().is_some_and(f64::is_finite), "{k}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"], v["metrics"]);
    let csv = fs::read_to_string(out.join("eval/pir.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn evaluation_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = trained(dir.path());
    let c = cfg.to_str().unwrap();
    ok_json(isf(&["evaluate", "--config", c]));
    let first = fs::read(out.join("eval/metrics.json")).unwrap();
    ok_json(isf(&["evaluate", "--config", c]));
    assert_eq!(first, fs::read(out.join("eval/metrics.json")).unwrap());
}

#[test]
fn edit_and_interpolate_write_strips() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = trained(dir.path());
    let c = cfg.to_str().unwrap();
    let v = ok_json(isf(&["edit", "--config", c, "--code-index", "0", "--flip", "1", "--count", "3"]));
    let edit_dir = PathBuf::from(v["dir"].as_str().unwrap());
    assert!(edit_dir.join("strip.png").exists());
    let meta: Value = serde_json::from_str(&fs::read_to_string(edit_dir.join("edit.json")).unwrap()).unwrap();
    assert_eq!(meta["edits"].as_array().unwrap().len(), 3);

    let v = ok_json(isf(&["interpolate", "--config", c, "--code-index", "0", "--to-index", "5", "--steps", "4"]));
    let path_dir = PathBuf::from(v["dir"].as_str().unwrap());
    assert!(path_dir.join("strip.png").exists());
    assert!(v["pir"].as_f64().is_some_and(|p| p >= 0.0));
    let v = ok_json(isf(&["interpolate", "--config", c, "--code-index", "0", "--targets", "1,0,1,0"]));
    assert!(PathBuf::from(v["dir"].as_str().unwrap()).join("path.json").exists());
}

#[test]
fn ablation_spec_produces_one_row_per_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = tiny_config(&out);
    cfg.train.total_iterations = 2;
    cfg.train.checkpoint_every = 0;
    let cfg = write_config(dir.path(), &cfg);
    let c = cfg.to_str().unwrap();
    ok_json(isf(&["build-dataset", "--config", c]));
    let spec = dir.path().join("ablation.json");
    fs::write(&spec, r#"{"drop_nb": true, "seeds": [0]}"#).unwrap();
    let v = ok_json(isf(&["ablate", "--config", c, "--spec", spec.to_str().unwrap()]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    let table = fs::read_to_string(out.join("ablation/ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("full,"));
    assert!(table.lines().nth(2).unwrap().starts_with("no_nb,"));
}

#[test]
fn invalid_config_exits_two_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut doc = tiny_config(&out).to_value();
    doc["train"]["batch_size"] = Value::from(-3);
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let o = isf(&["build-dataset", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "invalid-config");
    assert_eq!(err["exit_code"], 2);
    assert_eq!(err["config_schema_version"], CONFIG_SCHEMA_VERSION);
    assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));

    doc = tiny_config(&out).to_value();
    doc["surprise"] = Value::from(1);
    fs::write(&path, doc.to_string()).unwrap();
    assert_eq!(isf(&["build-dataset", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(&dir.path().join("run")));
    let o = isf(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn output_root_variable_redirects_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(&dir.path().join("ignored")));
    let root = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_isf"))
        .args(["build-dataset", "--config", cfg.to_str().unwrap()])
        .env("ISF_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.join("dataset/manifest.json").exists());
    assert!(!dir.path().join("ignored").exists());
}
