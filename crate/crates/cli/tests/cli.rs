//! End-to-end runs of the `bandit-lens` binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandit-lens"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn report_args(out: &str) -> Vec<&str> {
    vec![
        "report",
        "--config",
        "desk.toml",
        "--logs",
        "logs.jsonl",
        "--snapshot",
        "snapshot.json",
        "--out",
        out,
    ]
}

#[test]
fn init_simulate_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = bin(&["init", "--out", "desk.toml"], d);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let out = bin(
        &[
            "simulate",
            "--config",
            "desk.toml",
            "--rounds",
            "500",
            "--seed",
            "3",
            "--out",
            ".",
        ],
        d,
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("simulated 500 rounds"));
    let lines = std::fs::read_to_string(d.join("logs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 500);

    let out = bin(&report_args("a.json"), d);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("500 records (0 rejected lines)"));
    let out = bin(&report_args("b.json"), d);
    assert!(out.status.success());
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    let payload: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(payload["n_records"], 500);
    assert_eq!(payload["schema_version"], 1);
}

#[test]
fn simulation_is_reproducible_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--out", "desk.toml"], d).status.success());
    for sub in ["x", "y"] {
        let out = bin(
            &[
                "simulate",
                "--config",
                "desk.toml",
                "--rounds",
                "200",
                "--seed",
                "9",
                "--out",
                sub,
            ],
            d,
        );
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    for file in ["logs.jsonl", "snapshot.json"] {
        assert_eq!(
            std::fs::read(d.join("x").join(file)).unwrap(),
            std::fs::read(d.join("y").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn missing_snapshot_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--out", "desk.toml"], d).status.success());
    std::fs::write(d.join("logs.jsonl"), "").unwrap();
    let out = bin(&report_args("p.json"), d);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("snapshot.json"), "{err}");
    assert!(!d.join("p.json").exists());
}

#[test]
fn empty_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--out", "desk.toml"], d).status.success());
    assert!(bin(
        &[
            "simulate",
            "--config",
            "desk.toml",
            "--rounds",
            "10",
            "--out",
            "."
        ],
        d
    )
    .status
    .success());
    std::fs::write(d.join("logs.jsonl"), "\n").unwrap();
    let out = bin(&report_args("p.json"), d);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        text(&out.stderr).contains("empty log"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn mostly_malformed_log_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--out", "desk.toml"], d).status.success());
    assert!(bin(
        &[
            "simulate",
            "--config",
            "desk.toml",
            "--rounds",
            "10",
            "--out",
            "."
        ],
        d
    )
    .status
    .success());
    let mut log = std::fs::read_to_string(d.join("logs.jsonl")).unwrap();
    for _ in 0..5 {
        log.push_str("{\"record_id\": \"bad\"}\n");
    }
    std::fs::write(d.join("logs.jsonl"), log).unwrap();
    let out = bin(&report_args("p.json"), d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--out", "desk.toml"], d).status.success());
    let mut cfg = std::fs::read_to_string(d.join("desk.toml")).unwrap();
    cfg.insert_str(0, "colour = \"blue\"\n");
    std::fs::write(d.join("desk.toml"), cfg).unwrap();
    let out = bin(
        &[
            "simulate",
            "--config",
            "desk.toml",
            "--rounds",
            "10",
            "--out",
            ".",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        text(&out.stderr).contains("colour"),
        "{}",
        text(&out.stderr)
    );
}
