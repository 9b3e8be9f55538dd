use std::path::Path;
use std::process::{Command, Output};

fn kernlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernlab")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_required_field_is_a_config_error() {
    let out = kernlab(&["verify-quadric"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing required field `p`"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "command = \"verify-quadric\"\nprime = 3\n").unwrap();
    let out = kernlab(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quadric_over_f3_has_130_points() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quadric.json");
    let out = kernlab(&["verify-quadric", "--p", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&path);
    assert_eq!(r["counts"]["points"], 130);
    assert_eq!(r["pass"], true);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "command = \"verify-gauss\"\np = 3\nt-val = 1\n").unwrap();
    let path = dir.path().join("g.json");
    let out = kernlab(&["--config", cfg.to_str().unwrap(), "--b", "2", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&path);
    assert_eq!(r["config"]["b"], 2);
    assert_eq!(r["checks"].as_array().unwrap().len(), 1);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("twist.json");
    let run = || {
        let out = kernlab(&["verify-twist", "--p", "3", "--t-val", "1", "--seed", "11", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(&path).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
}

#[test]
fn local_zeta_with_ramified_character() {
    let out = kernlab(&[
        "verify-localzeta", "--p", "3", "--s", "2", "--chi", "-1", "--level", "3", "--conductor", "1", "--samples", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["checks"].as_array().unwrap().len(), 6);
}

#[test]
fn non_unit_b_is_rejected() {
    let out = kernlab(&["verify-gauss", "--p", "3", "--t-val", "1", "--b", "3"]);
    assert_eq!(out.status.code(), Some(2));
}
