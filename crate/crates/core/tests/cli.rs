mod common;

use std::process::{Command, Output};

use common::fixture_path;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradiometer"))
        .args(args)
        .env_remove("GRADIOMETER_SEED")
        .output()
        .expect("binary runs")
}

fn fx(name: &str) -> String {
    fixture_path(name).to_string_lossy().into_owned()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing_ms");
    v
}

#[test]
fn characterize_exit_codes_follow_the_verdict() {
    let cases = [
        ("euclidean_toy.json", 0, "locally-gradient"),
        ("euclidean_toy_rotation.json", 1, "not-gradient"),
        ("euclidean_toy_single_input.json", 2, "inconclusive"),
    ];
    for (file, code, kind) in cases {
        let out = run(&["characterize", &fx(file), "--samples", "16"]);
        assert_eq!(out.status.code(), Some(code), "{file}");
        let r = report(&out);
        assert_eq!(r["verdict"]["kind"], kind);
        assert_eq!(r["stages"].as_array().unwrap().len(), 9);
    }
}

#[test]
fn errors_exit_with_three() {
    assert_eq!(run(&["characterize", "/nonexistent/system.json"]).status.code(), Some(3));
    assert_eq!(run(&["characterize"]).status.code(), Some(3));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn reports_are_deterministic_per_seed() {
    let path = fx("example6_1_sigma1.json");
    let a = report(&run(&["characterize", &path, "--samples", "16", "--seed", "9"]));
    let b = report(&run(&["characterize", &path, "--samples", "16", "--seed", "9"]));
    assert_eq!(without_timing(a.clone()), without_timing(b));
    assert_eq!(a["seed"], 9);
    assert_eq!(a["verdict"]["kind"], "locally-gradient");

    let env = Command::new(env!("CARGO_BIN_EXE_gradiometer"))
        .args(["characterize", &path, "--samples", "16"])
        .env("GRADIOMETER_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(report(&env)["seed"], 9);
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("report.json");
    let out = run(&["characterize", &fx("euclidean_toy.json"), "--samples", "8", "--out", dest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "locally-gradient");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dest).unwrap()).unwrap();
    assert_eq!(r["command"], "characterize");
    assert_eq!(r["schema_version"], 1);
}

#[test]
fn compat_reports_a_witness() {
    let ok = run(&["compat", &fx("example6_1_sigma1.json")]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = run(&["compat", &fx("example6_1_sigma1_wrong_connection.json")]);
    assert_eq!(bad.status.code(), Some(1));
    let r = report(&bad);
    let failed = r["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["status"] == "failed")
        .expect("a failed stage");
    assert!(failed["residual"].as_f64().unwrap() >= 1e-2);
    assert_eq!(failed["witness"]["point"].as_array().unwrap().len(), 4);
}

#[test]
fn observability_ranks() {
    let full = run(&["observability", &fx("example6_1_sigma1.json"), "--depth", "2"]);
    assert_eq!(full.status.code(), Some(0));
    assert_eq!(report(&full)["rank"]["min_rank"], 4);
    let toy = run(&["observability", &fx("euclidean_toy_single_input.json")]);
    assert_eq!(toy.status.code(), Some(1));
    assert_eq!(report(&toy)["rank"]["max_rank"], 1);
}

#[test]
fn simulate_writes_a_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("traj.csv");
    let out = run(&["simulate", &fx("example6_1_sigma1.json"), "--csv", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!(r["conjugacy"]["residual"].as_f64().unwrap() <= 1e-6);

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.len(), 13);
    assert_eq!(header[0], "t");
    assert_eq!(header[12], "y_4");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1001);
    let t_end: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!((t_end - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_accepts_a_signal_file() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("signal.json");
    std::fs::write(
        &sig,
        r#"{"duration": 0.5, "breakpoints": [0.0, 0.25], "values": [[0.1, 0.2, 0.0, 0.3], [-0.2, 0.1, 0.4, 0.0]]}"#,
    )
    .unwrap();
    let out = run(&["simulate", &fx("example6_1_sigma1.json"), "--signal", sig.to_str().unwrap(), "--step", "1e-3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report(&out)["conjugacy"]["residual"].as_f64().unwrap() <= 1e-6);
}
