use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hitl_core::datasets::{load_kpi_csv, KpiColumns};
use serde_json::{json, Value};

fn hitl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitl"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn hitl")
}

fn small_config(dir: &Path) -> PathBuf {
    let config = json!({
        "dataset": {
            "kind": "synthetic",
            "num_series": 2,
            "points_per_series": 6000,
            "anomaly_rate": 0.01,
            "seed": 5
        },
        "detectors": [{ "kind": "iid" }, { "kind": "holt_winters", "season_length": 12 }],
        "embedding": { "hidden_size": 4, "epochs": 5 },
        "batch_length": 1000,
        "feedback_batches": 2,
        "seeds": [0, 1]
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_one_entry_per_detector() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("results.json");
    let o = hitl(&["run", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let detectors = doc["detectors"].as_array().unwrap();
    assert_eq!(detectors.len(), 2);
    assert_eq!(detectors[0]["detector"], "iid");
    assert_eq!(detectors[1]["detector"], "holt_winters");
    for d in detectors {
        for variant in ["base_only", "with_hitl"] {
            for field in ["precision", "recall", "f1"] {
                assert!(d["mean"][variant][field].is_number(), "{variant}.{field}");
            }
        }
        assert_eq!(d["runs"].as_array().unwrap().len(), 2);
        assert!(!d["runs"][0]["batches"].as_array().unwrap().is_empty());
    }
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("iid") && table.contains("holt_winters"), "{table}");
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = hitl(&["run", "--config", s(&config), "--seed", "7", "--detector", "iid", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a, b);
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["detectors"].as_array().unwrap().len(), 1);
    assert_eq!(doc["detectors"][0]["runs"][0]["seed"], 7);
}

#[test]
fn missing_dataset_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("kpi.json");
    std::fs::write(&config, r#"{"dataset": {"kind": "kpi_csv", "path": "nowhere.csv"}}"#).unwrap();
    let o = hitl(&["run", "--config", s(&config), "--out", s(&dir.path().join("r.json"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dataset.path"), "{err}");
}

#[test]
fn bad_field_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"thresholds": {"tau_a": "high", "tau_c": 0.9}}"#).unwrap();
    let o = hitl(&["run", "--config", s(&config)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("thresholds.tau_a"), "{err}");
}

#[test]
fn generate_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synthetic.json");
    std::fs::write(&config, r#"{"num_series": 2, "points_per_series": 1000, "anomaly_rate": 0.01, "seed": 3}"#).unwrap();
    let out = dir.path().join("data.csv");
    let o = hitl(&["generate", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = load_kpi_csv(&out, &KpiColumns::default()).unwrap();
    assert_eq!(series.len(), 2);
    assert!(series.iter().all(|s| s.len() == 1000));
    let labeled: usize = series
        .iter()
        .map(|s| s.labels().unwrap().iter().filter(|&&l| l).count())
        .sum();
    assert!(labeled > 0 && labeled <= 20);
}

#[test]
fn generate_to_a_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("no/such/dir/data.csv");
    let o = hitl(&["generate", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/dir"));
}
