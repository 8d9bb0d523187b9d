use std::path::Path;
use std::process::{Command, Output};

fn rssim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rssim"))
        .args(args)
        .env("RSSIM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("sim.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "M = 8\nK = 3\nvalues = [0.0, 20.0]\ndrops = 2\n";

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rho_max = 3.0\n");
    let out = rssim(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho_max"));
}

#[test]
fn bad_flag_exits_with_config_code() {
    let out = rssim(&["run", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_prints_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = rssim(&["run", "--config", &cfg, "--mode", "both", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("axis,axis_value,drop,mode"));
    assert!(lines[1].contains(",rs,"));
    assert!(lines[2].contains(",no_rs,"));
}

#[test]
fn sweep_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = rssim(&["sweep", "--config", &cfg, "--trials", "3", "--output", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = std::fs::read(&a).unwrap();
    assert_eq!(csv, std::fs::read(&b).unwrap());
    // 2 values x 3 drops x 2 modes plus the header.
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 13);
}

#[test]
fn sweep_to_missing_directory_fails_without_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let target = dir.path().join("missing").join("out.csv");
    let out = rssim(&["sweep", "--config", &cfg, "--output", target.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!target.exists());
}

#[test]
fn validate_refuses_too_few_samples() {
    let out = rssim(&["validate", "--trials", "50"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mc_samples"));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_rssim"))
        .args(["run"])
        .env("RSSIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
