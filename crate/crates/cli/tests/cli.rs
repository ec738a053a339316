//! End-to-end checks of the binary: exit codes, output files, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn momosim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momosim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = momosim(&["run", "--seed", "7", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["events.jsonl", "ledger.jsonl", "report.json"] {
        let path = dir.path().join("a").join(name);
        assert!(path.exists(), "{name} missing");
        assert!(std::fs::metadata(&path).unwrap().len() > 0, "{name} empty");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("conservation holds"));
    assert!(stdout.contains("kyc audit ok"));
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    momosim(&["run", "--seed", "5", "--out", "a"], dir.path());
    momosim(&["run", "--seed", "5", "--out", "b"], dir.path());
    momosim(&["run", "--seed", "6", "--out", "c"], dir.path());
    for name in ["events.jsonl", "ledger.jsonl", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs for identical seeds");
    }
    let a = std::fs::read(dir.path().join("a/events.jsonl")).unwrap();
    let c = std::fs::read(dir.path().join("c/events.jsonl")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn malformed_scenario_exits_two_with_field_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"version": 1, "typo_field": true, "users": [], "agents": []}"#,
    )
    .unwrap();
    let out = momosim(&["run", "--scenario", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("typo_field"), "{stderr}");
}

#[test]
fn attack_accepts_case_aliases_and_reports_zero_successes() {
    let dir = tempfile::tempdir().unwrap();
    let out = momosim(&["attack", "--case", "P1C4", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o/attack_table.json")).unwrap())
            .unwrap();
    let row = &table["rows"][0];
    assert_eq!(row["case"], "stale-replay");
    assert_eq!(row["alias"], "p1c4");
    assert_eq!(row["successes"], 0);
    assert_eq!(row["within_bounds"], true);
}

#[test]
fn attack_rejects_unknown_case_and_thin_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = momosim(&["attack", "--case", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("known cases"));

    let out = momosim(&["attack", "--case", "code-guess", "--trials", "10"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least"));
}

#[test]
fn analyze_reports_the_withdrawal_pair_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = momosim(
        &["analyze", "--out", "o", "--trials", "50", "--format", "json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["cost"]["extra_client_legs"], 3);
    assert_eq!(report["cost"]["extra_round_trips"], 1.5);
    assert_eq!(report["views"]["diff"]["data_minimization_score"], 3);
    let on_disk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report, on_disk);
}

#[test]
fn analyze_rejects_a_malformed_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = momosim(&["analyze", "--pair", "pp-withdrawal"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("comma-separated"));
}

#[test]
fn scenario_file_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("scenario.json"),
        r#"{
            "version": 1,
            "seed": 9,
            "provider": {"code_length": 6, "validity_window": 120},
            "users": [
                {"id": 1, "name": "A", "phone_number": "0712345678",
                 "national_id": "11111111", "pin": "1234", "balance": 500000},
                {"id": 2, "name": "B", "phone_number": "0722222222",
                 "national_id": "22222222", "pin": "5678", "balance": 500000}
            ],
            "agents": [
                {"id": 50, "agent_number": "400200",
                 "cash_drawer": 5000000, "float_balance": 5000000}
            ],
            "runs": [
                {"protocol": "pp-delegated", "initiator": 1, "collector": 2,
                 "amount": 40000, "agent": "400200"}
            ]
        }"#,
    )
    .unwrap();
    let out = momosim(
        &["run", "--scenario", "scenario.json", "--out", "o", "--format", "json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["seed"], 9);
    assert_eq!(report["runs"][0]["protocol"], "pp-delegated");
    assert_eq!(report["runs"][0]["outcome"], "settled");
    assert_eq!(report["runs"][0]["conformant"], true);
}
