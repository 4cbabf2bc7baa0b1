use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conscontrol"))
        .args(args)
        .output()
        .unwrap()
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn costcurve_defaults_write_seven_rows_and_a_fit() {
    let out = run(&["costcurve"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(body(&text).len(), 8);
    assert!(text.lines().any(|l| l.starts_with("# fit rate=")));
    assert!(text.contains("\"command\":\"costcurve\""));
}

#[test]
fn out_file_and_timestamp_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let p = path.to_str().unwrap();
    let out = run(&["costcurve", "--N", "16", "--out", p, "--timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# timestamp ")));
    let plain = run(&["costcurve", "--N", "16"]);
    assert_eq!(body(&text), body(&String::from_utf8(plain.stdout).unwrap()));
}

#[test]
fn tensor_emits_json() {
    let out = run(&["tensor"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    for row in doc["rows"].as_array().unwrap() {
        assert!(row["rel_diff"].as_f64().unwrap() <= 1e-10);
    }
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(run(&["costcurve", "--N", "0"]).status.code(), Some(2));
    assert_eq!(run(&["costcurve", "--samples", "2"]).status.code(), Some(2));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    let err = run(&["transmute", "--kernel-L", "1.5"]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8(err.stderr).unwrap().contains("kernel_L"));
    assert_eq!(
        run(&["costcurve", "--config", "/nonexistent/cfg.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn conditioning_failure_exits_with_three_and_flushes() {
    let out = run(&["costcurve", "--Tmin", "0.001", "--Tmax", "0.1"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(body(&text)[0], "T,kappa,log_kappa,T_log_kappa,cond");
    assert!(text.lines().any(|l| l.starts_with("# error")));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"N": 12, "samples": 3, "format": "json"}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let out = run(&["smoothing", "--config", c, "--N", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["config"]["N"], 10);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 3);
    assert!(Path::new(c).exists());
}

#[test]
fn selftest_is_deterministic_per_seed() {
    let a = run(&["selftest", "--seed", "3"]);
    let b = run(&["selftest", "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}
