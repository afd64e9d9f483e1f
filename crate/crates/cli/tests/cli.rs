use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairshare"))
        .args(args)
        .env_remove("FAIRSHARE_CONFIG")
        .output()
        .expect("binary runs")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_certifies_the_five_agent_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solution.json");
    let audit = dir.path().join("audit.json");
    let o = run(&[
        "solve",
        path(&data("five_agent.json")),
        "--method",
        "kkm",
        "--epsilon",
        "0.01",
        "--out",
        path(&out),
        "--audit-out",
        path(&audit),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["method"], "kkm");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, v);
    let a: Value = serde_json::from_str(&std::fs::read_to_string(&audit).unwrap()).unwrap();
    assert_eq!(a["ir"]["passes"], true);
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"objects\": [").unwrap();
    let o = run(&["solve", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(json(&o)["error"].as_str().unwrap().contains("parse"));
    let o = run(&["check", path(&data("five_agent.json")), path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["solve", path(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_reservations_exit_3() {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(data("five_agent.json")).unwrap()).unwrap();
    for a in doc["agents"].as_array_mut().unwrap() {
        let a = a.as_object_mut().unwrap();
        a.remove("endowment");
        a.insert("reservation".into(), "3".into());
    }
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("greedy.json");
    std::fs::write(&f, doc.to_string()).unwrap();
    for method in ["kkm", "market"] {
        let o = run(&["solve", path(&f), "--method", method]);
        assert_eq!(o.status.code(), Some(3), "{method}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("no individually rational allocation"));
    }
}

#[test]
fn check_reports_the_unjustified_envy() {
    let o = run(&[
        "check",
        path(&data("five_agent.json")),
        path(&data("five_agent_allocation.json")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    let facts = v["envy"]["facts"].as_array().unwrap();
    assert_eq!(facts.len(), 1);
    assert_eq!(facts[0]["envier"], 0);
    assert_eq!(facts[0]["envied"], 1);
    assert_eq!(facts[0]["justification"], "unjustified");
}

#[test]
fn injected_justified_envy_exits_1() {
    // agent 1 keeps its endowment while agent 2 holds a bundle 1 prefers and 2 would accept 1's
    let rows = serde_json::json!({ "rows": [
        ["0", "1", "0"],
        ["1/2", "0", "1/2"],
        ["1/6", "1/3", "1/2"],
        ["1/6", "1/3", "1/2"],
        ["1/6", "1/3", "1/2"]
    ]});
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.json");
    std::fs::write(&f, rows.to_string()).unwrap();
    let o = run(&["check", path(&data("five_agent.json")), path(&f)]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    assert_eq!(v["envy"]["nje"], false);
    assert!(v["envy"]["facts"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["envier"] == 0 && e["envied"] == 1 && e["justification"] != "unjustified"));
}

#[test]
fn endowment_allocation_is_ir_but_not_efficient() {
    let o = run(&[
        "check",
        path(&data("five_agent.json")),
        path(&data("five_agent_endowment_allocation.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    assert_eq!(v["ir"]["passes"], true);
    assert!(v["ir"]["slacks"].as_array().unwrap().iter().all(|s| s == "0"));
    let po = v["pareto"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["mode"] == "po")
        .unwrap();
    assert_eq!(po["passes"], false);
}

#[test]
fn decompose_reconstructs() {
    let o = run(&[
        "decompose",
        path(&data("five_agent.json")),
        path(&data("five_agent_allocation.json")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["reconstructs"], true);
}

#[test]
fn district_runs_end_to_end() {
    let o = run(&["district", path(&data("three_school_district.json"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["deferred_acceptance"]["assignment"], serde_json::json!([1, 0, 2]));
    assert!(!v["lottery"]["atoms"].as_array().unwrap().is_empty());
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"method": "market"}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fairshare"))
        .args(["solve", path(&data("five_agent.json"))])
        .env("FAIRSHARE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["method"], "market");
    // unknown keys are input errors
    std::fs::write(&cfg, r#"{"methd": "market"}"#).unwrap();
    let o = run(&["--config", path(&cfg), "solve", path(&data("five_agent.json"))]);
    assert_eq!(o.status.code(), Some(2));
    // an oversized regularizer is a config error
    let o = run(&["solve", path(&data("five_agent.json")), "--delta", "1/10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn campaign_is_clean_and_byte_identical() {
    let args = ["campaign", "--instances", "200", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["passes"], true);
    for (name, c) in v["properties"].as_object().unwrap() {
        assert_eq!(c["violations"], 0, "{name}");
    }
    assert_eq!(v["properties"]["income_identity"]["checked"], 1000);
}

#[test]
fn clone_campaign_checks_equal_treatment() {
    let o = run(&[
        "campaign",
        "--generator",
        "clone",
        "--instances",
        "10",
        "--max-agents",
        "4",
        "--max-objects",
        "3",
        "--kkm",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["properties"]["clone_equal_treatment"]["checked"], 10);
    assert_eq!(v["properties"]["clone_equal_treatment"]["violations"], 0);
}
