use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lcpg");

fn lcpg(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("spawn lcpg")
}

const QCQP_BENCH: &str = r#"{
  "id": "cvx",
  "problem": {"kind": "qcqp", "n": 50, "m": 5, "convexity": "convex", "alpha": 0.0},
  "methods": [{"method": "lcpg", "subsolver": "ipm"}],
  "seeds": 5,
  "iterations": 40
}"#;

#[test]
fn solve_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.json"), r#"{"problem": {"kind": "qcqp", "n": 20, "m": 3, "convexity": "dc", "seed": 1}}"#).unwrap();
    let o = lcpg(&["solve", "p.json", "--K", "15", "--out", "t.csv"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(trace.starts_with("k,obj"));
    assert_eq!(trace.lines().count(), 1 + 15);
}

#[test]
fn bench_grid_writes_results_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), QCQP_BENCH).unwrap();
    let o = lcpg(&["bench", "qcqp", "spec.json", "--workers", "2", "--out", "out"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(d.join("out/results.csv")).unwrap();
    assert_eq!(results, String::from_utf8(o.stdout).unwrap());
    let mut rdr = csv::Reader::from_reader(results.as_bytes());
    let status = rdr.headers().unwrap().iter().position(|h| h == "status").unwrap();
    let viol = rdr.headers().unwrap().iter().position(|h| h == "final_violation").unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(&r[status], "ok");
        assert!(r[viol].parse::<f64>().unwrap() <= 1e-9);
    }
    let traces: Vec<_> = std::fs::read_dir(d.join("out/traces")).unwrap().collect();
    assert_eq!(traces.len(), 5);

    let o = lcpg(&["plot", "out/traces/cvx_lcpg_seed0.csv", "out/traces/cvx_lcpg_seed1.csv", "--x", "passes", "--out", "plot.csv"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plot = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 * 40);
}

#[test]
fn bench_kind_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), QCQP_BENCH).unwrap();
    let o = lcpg(&["bench", "scad", "spec.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("qcqp"));
}

#[test]
fn unknown_json_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.json"), r#"{"problem": {"kind": "qcqp", "n": 20, "m": 3, "convexity": "dc", "sead": 1}}"#).unwrap();
    let o = lcpg(&["solve", "p.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sead"));
}

#[test]
fn quick_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcpg(&["check", "--quick"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}
