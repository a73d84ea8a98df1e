//! CLI acceptance: determinism under a fixed seed (byte-identical event
//! logs and stores across runs) and the stable exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn igs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igs"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(criterion: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("[pass] {criterion}");
    } else {
        println!("[FAIL] {criterion}: {}", failures.join("; "));
    }
    assert!(failures.is_empty(), "{criterion}: {failures:?}");
}

/// Criterion 8: two simulations with identical seed and config produce
/// byte-identical event logs and store files.
#[test]
fn acceptance_8_simulation_determinism() {
    let mut failures = Vec::new();
    let args = [
        "--seed",
        "42",
        "--out",
        "events.json",
        "simulate",
        "--groups",
        "2",
        "--members",
        "3",
        "--ticks",
        "80",
    ];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = igs(dir.path(), &args);
        if !out.status.success() {
            failures.push(format!(
                "simulate failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
            break;
        }
        let mut files = Vec::new();
        for name in ["events.json", "registry.jsonl", "odb.jsonl"] {
            files.push(std::fs::read(dir.path().join(name)).unwrap());
        }
        files.push(out.stdout.clone());
        snapshots.push(files);
    }
    if snapshots.len() == 2 && snapshots[0] != snapshots[1] {
        failures.push("repeated runs are not byte-identical".into());
    }
    report(
        "criterion 8: seeded simulation runs are byte-identical",
        &failures,
    );
}

#[test]
fn keygen_is_deterministic_and_validates_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--seed",
        "9",
        "keygen",
        "--imsi",
        "46601234567890",
        "--watchword",
        "a long passphrase",
        "--keyb",
    ];
    let a = igs(dir.path(), &args);
    let b = igs(dir.path(), &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("keya ") && text.contains("\nkeyb "));

    // Watchword shorter than the identity: usage error, exit 2.
    let short = igs(
        dir.path(),
        &["keygen", "--imsi", "46601234567890", "--watchword", "x"],
    );
    assert_eq!(short.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&short.stderr).contains("watchword too short"));

    // Hash scheme emits a truncated digest.
    let sha = igs(
        dir.path(),
        &["keygen", "--imsi", "123", "--scheme", "sha256", "--out-bits", "32"],
    );
    assert!(sha.status.success());
    assert!(String::from_utf8_lossy(&sha.stdout).starts_with("sha256 "));
}

#[test]
fn simulate_event_kinds_follow_tolerance() {
    // Near-infinite tolerance: pseudonyms swap.
    let dir = tempfile::tempdir().unwrap();
    let out = igs(
        dir.path(),
        &[
            "--seed", "3", "--out", "events.json", "simulate", "--groups", "1", "--members",
            "3", "--ticks", "200", "--tolerance", "1e12",
        ],
    );
    assert!(out.status.success());
    let log = std::fs::read_to_string(dir.path().join("events.json")).unwrap();
    assert!(log.contains("\"exchanged\""));
    assert!(!log.contains("\"regenerated\""));

    // Zero tolerance with dispersed members: regeneration only.
    let out = igs(
        dir.path(),
        &[
            "--seed", "3", "--out", "events.json", "simulate", "--groups", "1", "--members",
            "3", "--ticks", "200", "--tolerance", "0",
        ],
    );
    assert!(out.status.success());
    let log = std::fs::read_to_string(dir.path().join("events.json")).unwrap();
    assert!(log.contains("\"regenerated\""));
    assert!(!log.contains("\"exchanged\""));
}

#[test]
fn audit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = igs(
        dir.path(),
        &["--seed", "5", "simulate", "--groups", "1", "--members", "3", "--ticks", "50"],
    );
    assert!(out.status.success());

    let clean = igs(
        dir.path(),
        &["audit", "--registry", "registry.jsonl", "--odb", "odb.jsonl"],
    );
    assert_eq!(clean.status.code(), Some(0));

    // Inject a registered KeyA as an ODB pseudonym: exit 1 and the offending
    // line in the machine-readable report.
    let registry = std::fs::read_to_string(dir.path().join("registry.jsonl")).unwrap();
    let keya = registry
        .lines()
        .next()
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .and_then(|v| v["keya"].as_str().map(String::from))
        .unwrap();
    let odb_path = dir.path().join("odb.jsonl");
    let mut odb = std::fs::read_to_string(&odb_path).unwrap();
    let line_count = odb.lines().count();
    odb.push_str(&format!(
        "{{\"keyb\":\"{keya}\",\"x\":0,\"y\":0,\"level\":\"street\",\"t\":9,\"group\":\"g\"}}\n"
    ));
    std::fs::write(&odb_path, odb).unwrap();

    let dirty = igs(
        dir.path(),
        &[
            "--out", "audit.json", "audit", "--registry", "registry.jsonl", "--odb",
            "odb.jsonl",
        ],
    );
    assert_eq!(dirty.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap())
            .unwrap();
    assert_eq!(
        report["violations"][0]["line"].as_u64(),
        Some(line_count as u64 + 1)
    );
}

#[test]
fn oracle_reports_zero_bits_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = igs(
        dir.path(),
        &[
            "--seed", "2", "--out", "oracle.json", "oracle", "--q", "8", "--n", "4", "--k",
            "2", "--m", "2", "--trials", "2000",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    for row in report["mutual_information"].as_array().unwrap() {
        assert!(row["measured_bits"].as_f64().unwrap().abs() < 1e-9);
    }
}
