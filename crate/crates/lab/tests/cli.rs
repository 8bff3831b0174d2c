use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_issl-lab"))
        .args(args)
        .env("ISSL_LAB_JOBS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const SMALL_RISK: &str = r#"{"version": 1, "params": {"classes": [2, 3], "sizes": [0, 1, 2], "trials": 500}}"#;

#[test]
fn unknown_scenario_is_a_validation_error() {
    let o = lab(&["run", "no-such-scenario"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_configs_exit_2_without_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for (name, text) in [
        ("typo.json", r#"{"version": 1, "params": {"clases": [2]}}"#),
        ("version.json", r#"{"version": 7, "params": {}}"#),
        ("range.json", r#"{"version": 1, "params": {"classes": [1]}}"#),
        ("syntax.json", "{"),
    ] {
        let cfg = write(tmp.path(), name, text);
        let o = lab(&["run", "excess-risk", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{name} created output");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_RISK);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = lab(&["run", "excess-risk", "--config", &cfg, "--seed", "9", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_RISK);
    let mut outs = Vec::new();
    for jobs in ["1", "3"] {
        let dir = tmp.path().join(jobs);
        let o = Command::new(env!("CARGO_BIN_EXE_issl-lab"))
            .args(["--jobs", jobs, "run", "excess-risk", "--config", &cfg, "--out", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        outs.push(csv_files(&dir));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn rerun_reproduces_and_detects_tampering() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = lab(&["run", "coupon", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = out.join("manifest.json");
    let again = tmp.path().join("again");
    let o = lab(&["rerun", "--manifest", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_files(&out), csv_files(&again));

    let text = fs::read_to_string(&manifest).unwrap();
    let tampered = text.replacen("\"sha256\": \"", "\"sha256\": \"00", 1);
    let bad = write(tmp.path(), "bad.json", &tampered);
    let o = lab(&["rerun", "--manifest", &bad, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn defaults_round_trip_through_run() {
    let tmp = TempDir::new().unwrap();
    let o = lab(&["defaults", "theorem1"]);
    assert_eq!(code(&o), 0);
    let cfg = write(tmp.path(), "d.json", &String::from_utf8(o.stdout).unwrap());
    let out = tmp.path().join("t");
    let o = lab(&["run", "theorem1", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = &csv_files(&out)[0].1;
    let text = String::from_utf8_lossy(csv);
    assert!(text.lines().any(|l| l.starts_with("one-hot,") && l.ends_with(",true")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("constant,") && l.ends_with(",false")), "{text}");
}

#[test]
fn audit_encoder_reports_verdicts() {
    let tmp = TempDir::new().unwrap();
    let part = write(tmp.path(), "p.json", r#"{"size": 6, "class_of": [0, 0, 1, 1, 2, 2]}"#);
    let good = write(tmp.path(), "good.csv", "d=2\n1,0\n1,0\n0,1\n0,1\n0,0\n0,0\n");
    let bad = write(tmp.path(), "bad.csv", "d=2\n1,0\n0,1\n0,1\n0,1\n0,0\n0,0\n");
    for (enc, verdict) in [(&good, true), (&bad, false)] {
        let o = lab(&["audit-encoder", "--encoder", enc, "--partition", &part]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["report"]["verdict"], verdict, "{v}");
    }
    let o = lab(&["audit-encoder", "--encoder", &good, "--partition", &part, "--family", "rbf"]);
    assert_eq!(code(&o), 2);
    let o = lab(&["audit-encoder", "--encoder", "/nonexistent.csv", "--partition", &part]);
    assert_eq!(code(&o), 2);
}
