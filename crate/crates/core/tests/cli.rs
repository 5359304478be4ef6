use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftrule"))
        .args(args)
        .output()
        .unwrap()
}

fn path(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

#[test]
fn analyze_reports_structure_and_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1, 2]}"#);
    let out = run(&["analyze", &spec]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("Equidistant") || text.contains("equidistant"),
        "{text}"
    );
}

#[test]
fn synthesize_writes_rule_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1, 2.5]}"#);
    let rule = dir.path().join("rule.json");
    let out = run(&[
        "synthesize",
        &spec,
        "--order",
        "2",
        "--output",
        rule.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let written: Value = serde_json::from_str(&fs::read_to_string(&rule).unwrap()).unwrap();
    assert_eq!(written["coefficients"].as_array().unwrap().len(), 7);
    let report = json(&out);
    assert!(report.get("method").is_some());

    let validated = run(&["validate", rule.to_str().unwrap(), "--grid", "-1:1:25"]);
    assert_eq!(
        validated.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&validated.stdout)
    );
}

#[test]
fn quiet_suppresses_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1]}"#);
    let rule = dir.path().join("rule.json");
    let out = run(&[
        "synthesize",
        &spec,
        "--quiet",
        "--output",
        rule.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(rule.exists());
}

#[test]
fn config_file_overrides_the_condition_cap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1, 2.5]}"#);
    let cfg = path(dir.path(), "c.json", r#"{"condition_cap": 1.0}"#);
    let out = run(&["--config", &cfg, "synthesize", &spec, "--method", "direct"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = path(dir.path(), "bad.json", r#"{"condition_cap": -1.0}"#);
    let out = run(&["--config", &bad, "analyze", &spec]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn explicit_phases_must_match_the_system_size() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1]}"#);
    let out = run(&["synthesize", &spec, "--phases", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn variance_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "s.json", r#"{"eigenvalues": [0, 1, 2]}"#);
    let rule = dir.path().join("rule.json");
    run(&[
        "synthesize",
        &spec,
        "--quiet",
        "--output",
        rule.to_str().unwrap(),
    ]);
    let r = rule.to_str().unwrap();
    let a = run(&["variance", r, "--shots", "500", "--seed", "1"]);
    let b = run(&["variance", r, "--shots", "500", "--seed", "1"]);
    let c = run(&["variance", r, "--shots", "500", "--seed", "2"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let v = json(&a);
    assert!(v["coverage"].as_f64().unwrap() >= 0.9);
}
