use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rainbow");

fn rainbow(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rainbow(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn rows(csv: &Path) -> usize {
    fs::read_to_string(csv).unwrap().lines().count() - 1
}

#[test]
fn single_cell_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["run", "--policy", "rainbow", "--gen", "zipf", "--refs", "2e4", "--seed", "7", "--out", out];
    ok(&args("a"), dir.path());
    ok(&args("b"), dir.path());
    let a = fs::read(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/results.csv")).unwrap());
    assert_eq!(rows(&dir.path().join("a/results.csv")), 1);
    let sidecar = fs::read_to_string(dir.path().join("a/cells/rainbow-zipf-s7.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
    assert_eq!(v["report"]["references"], 20000);
    assert_eq!(v["cell"]["workload"]["generated"]["seed"], 7);
}

#[test]
fn golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "run", "--policy", "rainbow", "--policy", "flat-static", "--gen", "hot-superpage-mix", "--refs", "2e4",
            "--seed", "7", "--footprint", "1G", "--working-set", "64M", "--set", "monitor.interval_cycles=1e6",
            "--out", "g", "--jobs", "1",
        ],
        dir.path(),
    );
    let got = fs::read_to_string(dir.path().join("g/results.csv")).unwrap();
    let want = include_str!("data/golden_hsm_s7.csv");
    assert_eq!(got, want);
}

#[test]
fn interval_sweep_gives_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--gen", "uniform", "--refs", "5e3", "--sweep", "interval=1e5,1e6,1e7,1e8,1e9", "--out", "s"], dir.path());
    let csv = fs::read_to_string(dir.path().join("s/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.contains("monitor.interval_cycles=1e9"));
}

#[test]
fn parallel_and_serial_runs_match() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "--policy", "all", "--gen", "hot-superpage-mix", "--refs", "1e4", "--footprint", "256M", "--working-set", "16M"];
    let serial: Vec<&str> = base.iter().copied().chain(["--jobs", "1", "--out", "serial"]).collect();
    let parallel: Vec<&str> = base.iter().copied().chain(["--jobs", "4", "--out", "parallel"]).collect();
    ok(&serial, dir.path());
    ok(&parallel, dir.path());
    for f in ["results.csv", "cells/hscc-2m-mig-hot-superpage-mix-s1.json"] {
        assert_eq!(fs::read(dir.path().join("serial").join(f)).unwrap(), fs::read(dir.path().join("parallel").join(f)).unwrap());
    }
}

#[test]
fn report_normalizes_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--policy", "flat-static", "--gen", "uniform", "--refs", "5e3", "--out", "flat"], dir.path());
    let table = ok(&["report", "--dir", "flat", "--json"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&table).unwrap();
    let row = &v[0];
    for k in ["cycle_ratio", "mpkr_ratio", "traffic_ratio", "energy_ratio"] {
        assert_eq!(row[k], 1.0, "{k}");
    }

    ok(
        &[
            "run", "--policy", "rainbow,flat-static", "--gen", "hot-superpage-mix", "--refs", "2e4", "--footprint", "1G",
            "--working-set", "64M", "--out", "both",
        ],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_str(&ok(&["report", "--dir", "both", "--json"], dir.path())).unwrap();
    let rainbow = v.as_array().unwrap().iter().find(|r| r["policy"] == "rainbow").unwrap();
    assert!(rainbow["mpkr_ratio"].as_f64().unwrap() < 1.0);
    assert!(ok(&["report", "--dir", "both"], dir.path()).contains("rainbow"));
}

#[test]
fn report_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    assert!(!rainbow(&["report", "--dir", "empty"], dir.path()).status.success());
    ok(&["run", "--policy", "rainbow", "--gen", "uniform", "--refs", "1e3", "--out", "nobase"], dir.path());
    let out = rainbow(&["report", "--dir", "nobase"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));
}

#[test]
fn gen_dump_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--gen", "random-update", "--refs", "1000", "--seed", "3", "--out", "t.bin"], dir.path());
    assert_eq!(fs::metadata(dir.path().join("t.bin")).unwrap().len(), 16 + 16 * 1000);
    let text = ok(&["trace-dump", "t.bin", "--limit", "4"], dir.path());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    // read then write of the same line
    assert!(lines[0].starts_with("R 0 0x") && lines[1].starts_with("W 0 0x"));
    assert_eq!(lines[0][4..], lines[1][4..]);

    ok(&["run", "--policy", "all", "--trace", "t.bin", "--out", "replay"], dir.path());
    assert_eq!(rows(&dir.path().join("replay/results.csv")), 5);
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--policy", "bogus"][..],
        &["run", "--set", "monitor.interval_cycles=10"],
        &["run", "--set", "no.such.key=1"],
        &["run", "--trace", "missing.bin"],
        &["run", "--refs", "1.5"],
        &["run", "--sweep", "topn"],
        &["gen", "--gen", "uniform", "--hist", "nope", "--out", "x.bin"],
        &["trace-dump", "missing.bin"],
    ] {
        let out = rainbow(args, dir.path());
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} printed no message");
    }
    fs::write(dir.path().join("bad.bin"), b"NOTATRACE0000000").unwrap();
    let out = rainbow(&["trace-dump", "bad.bin"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}
