//! End-to-end tests of the gridtide binary: exit codes, file outputs,
//! provenance headers, and run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridtide(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gridtide"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    gridtide(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_summary(dir: &Path) -> serde_json::Value {
    let bytes = fs::read(dir.join("summary.json")).expect("summary.json exists");
    serde_json::from_slice(&bytes).expect("summary.json parses")
}

#[test]
fn simulate_verdict_flips_with_fleet() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base");
    let fleet = dir.path().join("fleet");
    let common = [
        "simulate",
        "--fault-bus",
        "12",
        "--fault-start",
        "1.0",
        "--fault-duration",
        "0.23",
        "--output-dir",
    ];

    let mut args: Vec<&str> = common.to_vec();
    let base_str = base.to_str().unwrap();
    args.push(base_str);
    args.extend(["--n-pev", "0"]);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert_eq!(read_summary(&base)["verdict"], "unstable");

    let mut args: Vec<&str> = common.to_vec();
    let fleet_str = fleet.to_str().unwrap();
    args.push(fleet_str);
    args.extend(["--n-pev", "50000"]);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary = read_summary(&fleet);
    assert_eq!(summary["verdict"], "stable");
    assert_eq!(summary["config"]["n_pev"], 50000);

    // The trajectory carries the resolved config and the case checksum.
    let csv = fs::read_to_string(fleet.join("timeseries.csv")).unwrap();
    assert!(csv.starts_with("# command: simulate\n"));
    let sha_line = csv
        .lines()
        .find(|l| l.starts_with("# case_sha256: "))
        .expect("checksum header present");
    let digest = sha_line.trim_start_matches("# case_sha256: ");
    assert_eq!(digest.len(), 64);
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(csv.contains("# n_pev: 50000"));
}

#[test]
fn zero_fault_duration_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--fault-bus",
        "12",
        "--fault-duration",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("duration"));
    assert!(!dir.path().join("timeseries.csv").exists());
}

#[test]
fn unknown_fault_bus_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--fault-bus",
        "99",
        "--fault-duration",
        "0.1",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("99"));
}

#[test]
fn validate_reports_the_bundled_case() {
    let out = run(&["validate"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("39 buses"));
    assert!(text.contains("swing machine at bus 31"));
    assert!(text.contains("power flow:  converged"));
}

#[test]
fn validate_rejects_a_case_without_a_swing_machine() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(
        &path,
        r#"{
        "name": "broken",
        "mva_base": 100.0,
        "frequency_hz": 60.0,
        "buses": [{"id": 1, "base_kv": 345.0}, {"id": 2, "base_kv": 345.0}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}],
        "generators": [
            {"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
             "inertia_h": 10.0, "damping": 1.0, "p_mw": 0.0,
             "v_setpoint": 1.0, "swing": false}
        ],
        "loads": [{"bus": 2, "p_mw": 10.0}],
        "acvgs": [2]
    }"#,
    )
    .unwrap();
    let out = run(&["validate", "--case", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("swing"));
}

#[test]
fn metrics_with_equal_fleets_reports_zero_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "metrics",
        "--step-bus",
        "29",
        "--step-factor",
        "1.2",
        "--step-hold",
        "2.0",
        "--horizon",
        "6",
        "--n-pev",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "quantity,without_control,with_control,reduction_pct");
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1], cells[2], "identical runs must match: {row}");
        assert_eq!(cells[3], "0");
    }
}

#[test]
fn metrics_without_a_disturbance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["metrics", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("disturbance"));
}

#[test]
fn repeated_ccl_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&[
            "ccl",
            "--bus",
            "12",
            "--n-pev",
            "0",
            "--resolution",
            "0.008",
            "--max-duration",
            "0.256",
            "--output-dir",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let first = fs::read(a.join("ccl.csv")).unwrap();
    let second = fs::read(b.join("ccl.csv")).unwrap();
    assert_eq!(first, second);

    // The bracket lands on the calibrated clearing time at this resolution.
    let text = String::from_utf8(first).unwrap();
    let row = text.lines().last().unwrap();
    let t_ccl: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.2..0.26).contains(&t_ccl), "t_ccl {t_ccl}");
}

#[test]
fn scenario_file_overrides_shortcut_flags() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("events.json");
    fs::write(
        &scenario,
        r#"[{"t": 1.0, "kind": "load_step", "bus": 20, "factor": 0.9}]"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--fault-bus",
        "12",
        "--fault-duration",
        "0.5",
        "--horizon",
        "4",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary = read_summary(&out_dir);
    let events = summary["config"]["events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["kind"], "load_step");
}

#[test]
fn garbled_thread_cap_is_rejected() {
    let out = gridtide(&["validate"])
        .env("GRIDTIDE_THREADS", "lots")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("GRIDTIDE_THREADS"));
}
