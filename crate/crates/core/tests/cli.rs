use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> (i32, Value) {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_qeuler"))
        .arg(cmd)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .status()
        .unwrap();
    let stem = cmd.replace('-', "_");
    let report = fs::read_to_string(out.join(format!("{stem}.json")))
        .map(|s| serde_json::from_str(&s).unwrap())
        .unwrap_or(Value::Null);
    (status.code().unwrap(), report)
}

#[test]
fn integrate_writes_trajectory_header() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run("integrate", r#"{"system": "orszag_mclaughlin", "n": 5, "m": 10, "t": 0.1}"#, dir.path(), &[]);
    assert_eq!(code, 0);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["run"]["m"], 10);
    assert!(report["config"]["run"]["epsilon"].is_number());
    let csv = fs::read_to_string(dir.path().join("out/integrate.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    let mut want = vec!["step".to_string(), "t".to_string()];
    for j in 1..=5 {
        want.push(format!("re_z{j}"));
        want.push(format!("im_z{j}"));
    }
    want.push("probability".into());
    want.push("norm_factor".into());
    assert_eq!(header, want.join(","));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn plan_emits_resource_plan() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run("plan", r#"{"system": "doubling", "m": 1, "epsilon": 1.0}"#, dir.path(), &[]);
    assert_eq!(code, 0);
    assert_eq!(report["result"]["plan"]["n0"], 32);
    assert_eq!(report["result"]["plan"]["p"], 0.5);
}

#[test]
fn montecarlo_failure_exits_one_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    // N0 = 2^m leaves no slack: the first round needs every pair to succeed.
    let config = r#"{"system": "doubling", "mode": "montecarlo", "m": 3, "epsilon": 1.0, "plan_base": 1.0}"#;
    let (code, report) = run("iterate", config, dir.path(), &[]);
    assert_eq!(code, 1);
    assert_eq!(report["status"], "failure");
    assert_eq!(report["result"]["report"]["success"], false);
    assert!(report["result"]["report"]["failed_round"].is_number());
    let csv = fs::read_to_string(dir.path().join("out/iterate.csv")).unwrap();
    assert!(csv.starts_with("step,t,re_z1,im_z1,probability,norm_factor,copies\n"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run("iterate", r#"{"system": "doubling", "epsilonn": 0.5}"#, dir.path(), &[]);
    assert_eq!(code, 2);
    let (code, report) = run("iterate", r#"{"system": "doubling", "epsilon": 5.0}"#, dir.path(), &[]);
    assert_eq!(code, 2);
    assert_eq!(report["status"], "config_error");
    let (code, _) = run("integrate", r#"{"system": "lorenz", "m": 3}"#, dir.path(), &[]);
    assert_eq!(code, 2);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = run("iterate", r#"{"system": "identity", "n": 3}"#, dir.path(), &["--seed", "5"]);
    assert_eq!(a["config"]["run"]["seed"], 5);
    let (_, b) = run("iterate", r#"{"system": "identity", "n": 3}"#, dir.path(), &["--seed", "6"]);
    assert_ne!(a["config"]["run"]["initial"], b["config"]["run"]["initial"]);
}

#[test]
fn resolved_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"system": {"name": "random_torus", "n": 2}, "mode": "noise_study", "m": 3, "trials": 5, "seed": 9}"#;
    let (code, first) = run("iterate", config, dir.path(), &[]);
    assert_eq!(code, 0);
    let csv_first = fs::read(dir.path().join("out/iterate.csv")).unwrap();
    let resolved = serde_json::to_string(&first["config"]).unwrap();
    let (code, second) = run("iterate", &resolved, dir.path(), &[]);
    assert_eq!(code, 0);
    assert_eq!(first, second);
    assert_eq!(csv_first, fs::read(dir.path().join("out/iterate.csv")).unwrap());
}

#[test]
fn observe_with_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "system": "doubling", "m": 2,
        "observe": {"observables": [{"kind": "identity"}, {"kind": "projector", "index": 1}], "delta": 0.1},
        "output": {"state_dump": true, "operator_dump": true}
    }"#;
    let (code, report) = run("observe", config, dir.path(), &[]);
    assert_eq!(code, 0);
    let final_values = &report["result"]["final"];
    assert!((final_values[0]["state"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((final_values[1]["amplitude"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let state = fs::read_to_string(dir.path().join("out/observe_state.csv")).unwrap();
    assert!(state.starts_with("basis_index,re,im\n"));
    let op = fs::read_to_string(dir.path().join("out/observe_operator.csv")).unwrap();
    assert!(op.starts_with("row,col,re,im\n"));
}
