use std::path::Path;
use std::process::{Command, Output};

use eigenshift::harness::{read_records, read_summary, SEED_ENV};

fn eigenshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenshift"))
        .args(args)
        .env_remove(SEED_ENV)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const CONFIG: &str = r#"
study = "bound_validity"
trials = 6
seed_base = 3
set = { top = 2 }
[model]
kind = "covariance"
n = 300
[model.profile]
kind = "exponential"
alpha = 1.0
p = 8
"#;

#[test]
fn bound_on_the_running_example() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "2\n2 0\n0 1\n");
    let b = write(dir.path(), "b.txt", "2\n2 0.1\n0.1 1\n");
    let out = eigenshift(&["bound", &a, &b, "--set", "1", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["dk_hs"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!((v["rank_i"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(v["thm2_applicable"], serde_json::Value::Bool(false));

    let text = eigenshift(&["bound", &a, &b, "--set", "1"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("distance_sq"));
}

#[test]
fn bound_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "2\n2 0\n0 1\n");
    let asym = write(dir.path(), "asym.txt", "2\n2 1\n0 1\n");
    let out = eigenshift(&["bound", &a, &asym]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("symmetric"));
    assert_eq!(eigenshift(&["bound", &a, &a, "--set", "3"]).status.code(), Some(2));
    assert_eq!(eigenshift(&["bound", &a, "/nonexistent"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_both_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "study.toml", CONFIG);
    let out_dir = dir.path().join("out");
    let out = eigenshift(&["simulate", &cfg, "--workers", "3", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_records(out_dir.join("records.csv")).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.seed == 3));
    let summary = read_summary(out_dir.join("summary.json")).unwrap();
    assert_eq!(summary.trials, 6);
    assert_eq!(summary.total_violations(), 0);
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "study.toml", CONFIG);
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_eigenshift"));
        cmd.args(["simulate", &cfg, "--format", "csv"]).env_remove(SEED_ENV);
        if let Some(e) = env {
            cmd.env(SEED_ENV, e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let csv = String::from_utf8(out.stdout).unwrap();
        csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
    };
    assert_eq!(run(None, None), "3");
    assert_eq!(run(Some("11"), None), "11");
    assert_eq!(run(Some("11"), Some("17")), "17");
}

#[test]
fn simulate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &CONFIG.replace("trials = 6", "trials = 0"));
    assert_eq!(eigenshift(&["simulate", &cfg]).status.code(), Some(2));
    assert_eq!(eigenshift(&["simulate", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn verify_exit_code_tracks_violations() {
    let out = eigenshift(&["verify", "--format", "json", "--workers", "4"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: u64 = report["sections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["violations"].as_u64().unwrap())
        .sum();
    let expected = if total == 0 { 0 } else { 1 };
    assert_eq!(out.status.code(), Some(expected));
}
