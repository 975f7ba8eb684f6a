use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn turnpike(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnpike"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_preset_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(&["run", "kepler-fig1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["trajectory.csv", "iterations.csv", "summary.json"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["status"], "converged");
    assert_eq!(summary["intervals"], 300);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 301);
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(&["run", "kepler-fig3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("unknown preset"));
    assert_eq!(err["kind"], "usage");
}

#[test]
fn trajectory_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(turnpike(&["solve", "--preset", "kepler-fig2"], a.path()).status.success());
    assert!(turnpike(&["solve", "--preset", "kepler-fig2"], b.path()).status.success());
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn trim_finds_circular_speed() {
    let dir = tempfile::tempdir().unwrap();
    let out = turnpike(&["trim", "--s", "4.5", "--v-theta", "3.5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let k: f64 = 1016.895192894334;
    let expect = (k / 4.5f64.powi(3)).sqrt();
    assert!((v["v_theta"].as_f64().unwrap() - expect).abs() < 1e-8, "{v}");
    assert_eq!(read_json(&dir.path().join("trim.json")), v);
}

#[test]
fn config_file_enables_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{"preset": "kepler-fig2", "nco_check": true, "tocp": true}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_turnpike"))
        .arg("run")
        .arg("kepler-fig2")
        .arg("--config")
        .arg(&cfg)
        .args(["--window", "5,90"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("nco_report.json"));
    assert_eq!(report["tocp"]["status"], "converged");
    assert!(report["correspondence"]["max_abs"].as_f64().unwrap() < 1e-3);
    assert!(dir.path().join("tocp_trajectory.csv").is_file());
}
