use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn heatcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TRAIN: &str = r#"{
  "data": {"csv": "gen/data.csv"},
  "train": {"start": "2010-01-01", "end": "2010-09-30"},
  "validation": {"start": "2010-10-01", "end": "2010-12-31"},
  "window": 4,
  "variant": "D",
  "hidden_layers": 2,
  "hidden_size": 5,
  "train_config": {"epochs": 3}
}"#;

fn generate_and_train(dir: &Path) {
    write(dir, "synth.json", r#"{"years": 1, "start_year": 2010}"#);
    write(dir, "train.json", TRAIN);
    ok(&heatcast(dir, &["generate", "--config", "synth.json", "--out", "gen"]));
    ok(&heatcast(dir, &["train", "--config", "train.json", "--seed", "4", "--out", "model"]));
}

#[test]
fn generate_train_predict_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate_and_train(dir);
    let model = read_json(&dir.join("model/model.json"));
    assert_eq!(model["window_length"], 4);
    assert_eq!(model["factor_order"], serde_json::json!(["temp", "solar", "wind"]));

    write(
        dir,
        "predict.json",
        r#"{"model": "model/model.json", "data": {"csv": "gen/data.csv"},
            "range": {"start": "2010-10-01", "end": "2010-12-31"}, "window": 4}"#,
    );
    ok(&heatcast(dir, &["predict", "--config", "predict.json", "--out", "pred"]));
    let csv = std::fs::read_to_string(dir.join("pred/predictions.csv")).unwrap();
    assert!(csv.starts_with("timestamp,actual_mw,predicted_mw\n2010-10-01T04:00,"));

    write(dir, "evaluate.json", r#"{"predictions": "pred/predictions.csv"}"#);
    ok(&heatcast(dir, &["evaluate", "--config", "evaluate.json", "--out", "eval"]));
    let report = read_json(&dir.join("eval/report.json"));
    let mape = report["metrics"]["mape"].as_f64().unwrap();
    assert!(mape > 0.0 && mape < 100.0);
    for table in ["ranges.csv", "histogram.csv", "daily_mape.csv"] {
        assert!(dir.join("eval").join(table).exists());
    }
}

#[test]
fn predict_rejects_mismatched_window() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate_and_train(dir);
    write(
        dir,
        "predict.json",
        r#"{"model": "model/model.json", "data": {"csv": "gen/data.csv"}, "window": 8}"#,
    );
    let out = heatcast(dir, &["predict", "--config", "predict.json", "--out", "pred"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window 8"));
    assert!(!dir.join("pred/predictions.csv").exists());
}

#[test]
fn identity_predictions_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("timestamp,actual_mw,predicted_mw\n");
    for h in 0..48 {
        let mw = 100.0 + 7.5 * h as f64;
        csv += &format!("2011-01-{:02}T{:02}:00,{mw},{mw}\n", 3 + h / 24, h % 24);
    }
    write(dir, "p.csv", &csv);
    write(dir, "evaluate.json", r#"{"predictions": "p.csv"}"#);
    ok(&heatcast(dir, &["evaluate", "--config", "evaluate.json", "--out", "eval"]));
    let report = read_json(&dir.join("eval/report.json"));
    assert_eq!(report["metrics"]["mape"], 0.0);
    assert_eq!(report["metrics"]["mad"], 0.0);
    assert_eq!(report["daily_mape"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_honours_overrides_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "plan.json",
        r#"{
  "data": {"synth": {"years": 2, "start_year": 2010}},
  "train": {"start": "2010-01-01", "end": "2010-03-31"},
  "validation": {"start": "2011-01-01", "end": "2011-01-31"},
  "windows": [2, 4],
  "hidden_layers": [1],
  "variants": ["A"],
  "hidden_size": 4,
  "train_config": {"epochs": 2, "early_stop_patience": 0}
}"#,
    );
    let args = [
        "sweep", "--config", "plan.json", "--seed", "99", "--set", "trials=2", "--out", "a",
    ];
    ok(&heatcast(dir, &args));
    let report = read_json(&dir.join("a/report.json"));
    assert_eq!(report["plan"]["master_seed"], 99);
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
    let trials = std::fs::read_to_string(dir.join("a/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 5);

    let mut seq = args.to_vec();
    seq.extend(["--sequential"]);
    *seq.iter_mut().find(|a| **a == "a").unwrap() = "b";
    ok(&heatcast(dir, &seq));
    assert_eq!(
        std::fs::read(dir.join("a/report.json")).unwrap(),
        std::fs::read(dir.join("b/report.json")).unwrap()
    );
}

#[test]
fn bad_config_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "plan.json", r#"{"trials": 0}"#);
    let out = heatcast(dir, &["sweep", "--config", "plan.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = heatcast(dir, &["evaluate", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    write(dir, "x.json", r#"{"predictions": "p.csv", "bogus": 1}"#);
    let out = heatcast(dir, &["evaluate", "--config", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}
