use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbdc_sim::RunReport;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn sandbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sandbox")).args(args).output().unwrap()
}

fn run(config: &Path, dir: &Path, tag: &str) -> (Output, PathBuf, PathBuf, PathBuf) {
    let report = dir.join(format!("{tag}.report.json"));
    let ledger = dir.join(format!("{tag}.ledger.jsonl"));
    let aml = dir.join(format!("{tag}.aml.jsonl"));
    let out = sandbox(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--ledger",
        ledger.to_str().unwrap(),
        "--aml",
        aml.to_str().unwrap(),
    ]);
    (out, report, ledger, aml)
}

#[test]
fn run_persists_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["thirty_seven.json", "busy_market.json", "quorum_loss.json"] {
        let (out, report, ledger, aml) = run(&scenario(name), dir.path(), name);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let r: RunReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert!(r.all_audits_passed);

        let lines = std::fs::read_to_string(&ledger).unwrap().lines().count();
        assert_eq!(lines, r.ledger_entries);
        let deposits: u64 = r.balances.merchants.values().map(|m| m.deposited).sum();
        let aml_total: u64 = std::fs::read_to_string(&aml)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["amount"].as_u64().unwrap())
            .sum();
        assert_eq!(aml_total, deposits);

        let out = sandbox(&["replay", "--ledger", ledger.to_str().unwrap(), "--expect-digest", &r.ledger_digest]);
        assert!(out.status.success());
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), r.ledger_digest);
    }
}

#[test]
fn run_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a, _, _) = run(&scenario("busy_market.json"), dir.path(), "a");
    let (_, b, _, _) = run(&scenario("busy_market.json"), dir.path(), "b");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn seed_override_changes_the_ledger() {
    let config = scenario("thirty_seven.json");
    let out = sandbox(&["run", "--config", config.to_str().unwrap(), "--seed", "43"]);
    assert!(out.status.success());
    let r: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.seed, 43);
    let base = sandbox(&["run", "--config", config.to_str().unwrap()]);
    let b: RunReport = serde_json::from_slice(&base.stdout).unwrap();
    assert_ne!(r.ledger_digest, b.ledger_digest);
}

#[test]
fn replay_rejects_a_tampered_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, ledger, _) = run(&scenario("thirty_seven.json"), dir.path(), "t");
    let text = std::fs::read_to_string(&ledger).unwrap();
    let tampered = text.replacen("\"tick\":1,", "\"tick\":2,", 1);
    assert_ne!(tampered, text);
    std::fs::write(&ledger, tampered).unwrap();
    let out = sandbox(&["replay", "--ledger", ledger.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("entry 0"));

    std::fs::write(&ledger, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(!sandbox(&["replay", "--ledger", ledger.to_str().unwrap()]).status.success());

    std::fs::write(&ledger, text).unwrap();
    let out = sandbox(&["replay", "--ledger", ledger.to_str().unwrap(), "--expect-digest", "00"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "wallets": {"count": 1, "initial_balances": [5]}, "merchants": 1, "validators": {"n": 3, "k": 4}}"#).unwrap();
    let out = sandbox(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k=4"));
}
