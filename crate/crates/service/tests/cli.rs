use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ctl(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflectctl"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("REFLECT_STORE")
        .env_remove("REFLECT_LLM_PROVIDER")
        .env_remove("REFLECT_ACCESS_CODE")
        .output()
        .unwrap()
}

fn ok(store: &Path, args: &[&str]) -> Value {
    let out = ctl(store, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn err_code(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("errors are JSON on stderr");
    v["error"].as_str().unwrap().to_owned()
}

/// 15 teams of two, all initially regular.
fn populate(dir: &Path) {
    ok(dir, &["study", "create", "--study-id", "s1"]);
    for t in 1..=15 {
        let team = format!("team-{t:02}");
        ok(dir, &["team", "add", "--team-id", &team, "--condition", "regular"]);
        for m in 0..2 {
            let pid = format!("p-{t:02}-{m}");
            ok(dir, &["participant", "add", "--participant-id", &pid, "--team-id", &team, "--name", &pid, "--access-code", "secret"]);
        }
    }
}

#[test]
fn seeded_assignment_is_balanced_and_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    populate(a.path());
    populate(b.path());
    let first = ok(a.path(), &["--seed", "42", "study", "assign", "--random-assign"]);
    let second = ok(b.path(), &["--seed", "42", "study", "assign", "--random-assign"]);
    assert_eq!(first, second);
    let conditions: Vec<&str> = first.as_array().unwrap().iter().map(|t| t["condition"].as_str().unwrap()).collect();
    for c in ["regular", "deeper", "control"] {
        assert_eq!(conditions.iter().filter(|x| **x == c).count(), 5, "{c}");
    }

    let out = ctl(a.path(), &["export"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let participants: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["kind"] == "participant")
        .collect();
    assert_eq!(participants.len(), 3 * 5 * 2);
    assert!(!text.contains("secret"));
    for p in &participants {
        let team = &first.as_array().unwrap()[p["team_id"].as_str().unwrap()[5..].parse::<usize>().unwrap() - 1];
        assert_eq!(p["condition"], team["condition"]);
    }
}

#[test]
fn duplicate_ids_and_missing_study_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(err_code(&ctl(dir.path(), &["team", "add", "--team-id", "t", "--condition", "control"])), "unknown_study");
    ok(dir.path(), &["study", "create"]);
    assert_eq!(err_code(&ctl(dir.path(), &["study", "create"])), "duplicate_id");
    ok(dir.path(), &["team", "add", "--team-id", "t", "--condition", "control"]);
    assert_eq!(err_code(&ctl(dir.path(), &["team", "add", "--team-id", "t", "--condition", "deeper"])), "duplicate_id");
    let add = ["participant", "add", "--participant-id", "p", "--team-id", "t", "--name", "P"];
    let p = ok(dir.path(), &add);
    assert_eq!(p["condition"], "control");
    assert_eq!(err_code(&ctl(dir.path(), &add)), "duplicate_id");
    let orphan = ["participant", "add", "--participant-id", "q", "--team-id", "none", "--name", "Q"];
    assert_eq!(err_code(&ctl(dir.path(), &orphan)), "unknown_team");
    assert_eq!(err_code(&ctl(dir.path(), &["export", "--format", "xml"])), "unsupported_format");
    assert_eq!(err_code(&ctl(dir.path(), &["study", "create", "--interval-days", "6"])), "invalid_config");
}

#[test]
fn empty_study_exports_and_ticks() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["study", "create"]);
    assert_eq!(ctl(dir.path(), &["export", "--format", "csv"]).stdout, b"kind\n");
    assert!(ctl(dir.path(), &["export"]).stdout.is_empty());
    let report = ok(dir.path(), &["tick", "--now", "2025-03-05T08:00:00Z"]);
    assert_eq!(report["notifications"], 0);
}

#[test]
fn ticking_the_same_instant_twice_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["study", "create"]);
    ok(dir.path(), &["team", "add", "--team-id", "t", "--condition", "deeper"]);
    for p in ["a", "b"] {
        ok(dir.path(), &["participant", "add", "--participant-id", p, "--team-id", "t", "--name", p]);
    }
    let first = ok(dir.path(), &["tick", "--now", "2025-03-05T09:00:00Z"]);
    assert_eq!(first["prompts_generated"], 8);
    let second = ok(dir.path(), &["tick", "--now", "2025-03-05T09:00:00Z"]);
    assert_eq!((second["prompts_generated"].as_u64(), second["notifications"].as_u64()), (Some(0), Some(0)));
}

#[test]
fn simulate_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "5", "simulate", "--days", "5", "--teams-per-condition", "1"];
    let a = ctl(dir.path(), &args);
    let b = ctl(dir.path(), &args);
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}
