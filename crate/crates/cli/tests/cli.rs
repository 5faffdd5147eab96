use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v2v-aoi"))
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn run_writes_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "run",
            "--slots",
            "300",
            "--seed",
            "4",
            "--trace",
            "--positions",
            "--groups",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    let summary = stdout_json(&out);
    assert_eq!(summary["slots"], 300);
    assert_eq!(summary["seed"], 4);
    for f in [
        "summary.json",
        "aoi_ccdf.csv",
        "trace.csv",
        "positions.csv",
        "clusters.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let on_disk: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(on_disk, summary);
    let ccdf = fs::read_to_string(dir.path().join("aoi_ccdf.csv")).unwrap();
    assert!(ccdf.starts_with("threshold_s,prob\n"));
    let positions = fs::read_to_string(dir.path().join("positions.csv")).unwrap();
    assert!(positions.starts_with("slot,pair_id,tx_x,tx_y,rx_x,rx_y\n"));
    assert_eq!(positions.lines().count(), 1 + 300 * 20);
}

#[test]
fn optional_files_stay_off_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--slots", "100", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    stdout_json(&out);
    assert!(!dir.path().join("trace.csv").exists());
    assert!(!dir.path().join("positions.csv").exists());
    assert!(!dir.path().join("clusters.json").exists());
}

#[test]
fn same_seed_same_summary_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = bin()
            .args([
                "run",
                "--slots",
                "200",
                "--policy",
                "baseline2",
                "--arrival",
                "poisson",
                "--out",
            ])
            .arg(d.path())
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("summary.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"num_pairs": 6, "num_groups": 2, "num_rbs": 6, "lyapunov_v": 5}"#,
    )
    .unwrap();
    let out = bin()
        .args(["run", "--slots", "150", "--rate-model", "fbl", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    let s = stdout_json(&out);
    assert_eq!(s["num_pairs"], 6);
    assert_eq!(s["rate_model"], "fbl");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"num_pairs": 0}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn sweep_prints_one_point_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "sweep", "--slots", "150", "--param", "v", "--values", "0,50", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    let v = stdout_json(&out);
    let points = v.as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[1]["value"], 50.0);
    assert!(points[0]["summary"]["avg_power_w"].as_f64().unwrap() >= 0.0);
    assert!(dir.path().join("v_0").join("summary.json").is_file());
    assert!(dir.path().join("v_1").join("aoi_ccdf.csv").is_file());
}

#[test]
fn fit_gpd_reads_named_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    // Exponential quantiles: sigma = 1, xi = 0.
    let mut text = String::from("id,excess\n");
    for i in 0..2000 {
        let u = (i as f64 + 0.5) / 2000.0;
        text.push_str(&format!("{i},{}\n", -(1.0 - u).ln()));
    }
    fs::write(&path, text).unwrap();
    let out = bin()
        .args(["fit-gpd", "--column", "excess", "--input"])
        .arg(&path)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert!((v["sigma"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert!(v["xi"].as_f64().unwrap().abs() < 0.05);
    assert_eq!(v["n"], 2000);
}

#[test]
fn fit_gpd_rejects_short_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    fs::write(&path, "1.0\n2.0\n3.0\n").unwrap();
    let out = bin()
        .args(["fit-gpd", "--input"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
}
