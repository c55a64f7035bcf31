use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plangym"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn plangym")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
    store: PathBuf,
    queries: PathBuf,
}

fn world(profile: &str, count: &str) -> World {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let store = root.join("store.json");
    let queries = root.join("queries.jsonl");
    ok(&["gen-sandbox", "--seed", "7", "--profile", profile, "--out", s(&store)]);
    ok(&[
        "gen-queries",
        "--store",
        s(&store),
        "--count",
        count,
        "--out",
        s(&queries),
        "--witness-dir",
        s(&root.join("witness")),
    ]);
    World { _dir: dir, root, store, queries }
}

fn query_ids(w: &World) -> Vec<String> {
    std::fs::read_to_string(&w.queries)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["query_id"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn gen_sandbox_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["gen-sandbox", "--seed", "7", "--profile", "small", "--out", s(&a)]);
    ok(&["gen-sandbox", "--seed", "7", "--profile", "small", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn witness_scores_one_under_stage3() {
    let w = world("small", "6");
    for id in query_ids(&w) {
        let plan = w.root.join("witness").join(format!("{id}.json"));
        let out = ok(&[
            "score-plan",
            "--store",
            s(&w.store),
            "--queries",
            s(&w.queries),
            "--plan",
            s(&plan),
            "--query",
            &id,
            "--lambda",
            "stage3",
        ]);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["reward"]["total"], 1.0, "{id}");
    }
}

#[test]
fn eval_on_empty_dump_is_all_zero() {
    let w = world("micro", "1");
    let empty = w.root.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = ok(&["eval", "--store", s(&w.store), "--queries", s(&w.queries), "--trajectories", s(&empty)]);
    let v: Value = serde_json::from_str(&out).unwrap();
    for (k, x) in v.as_object().unwrap() {
        assert_eq!(x.as_f64(), Some(0.0), "{k}");
    }
}

#[test]
fn errors_are_json_on_stderr() {
    let out = run(&["gen-sandbox", "--profile", "gigantic", "--out", "/tmp/never.json"]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["error"].as_str().unwrap().contains("gigantic"));

    let out = run(&["eval", "--store", "/nonexistent", "--queries", "/x", "--trajectories", "/y"]);
    assert!(!out.status.success());
    assert!(serde_json::from_slice::<Value>(&out.stderr).is_ok());
}

#[test]
fn serve_dump_feeds_report() {
    let w = world("micro", "2");
    let id = &query_ids(&w)[0];
    let plan = std::fs::read_to_string(w.root.join("witness").join(format!("{id}.json"))).unwrap();
    let answer = format!("<answer>{plan}</answer>");
    let script = [
        serde_json::json!({"op": "reset", "episode_id": "a", "payload": {"query_id": id, "sampler": "greedy"}}),
        serde_json::json!({"op": "step", "episode_id": "a", "payload": {"text": "<tool_call>{\"name\": \"get_cities\", \"arguments\": {\"state\": \"nowhere\"}}</tool_call>"}}),
        serde_json::json!({"op": "step", "episode_id": "a", "payload": {"text": answer}}),
        serde_json::json!({"op": "close", "episode_id": "a"}),
    ];
    let dump = w.root.join("dump.jsonl");
    let mut child = bin()
        .args(["serve", "--store", s(&w.store), "--queries", s(&w.queries), "--dump", s(&dump)])
        .env("PLANGYM_LAMBDA", "stage3")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        for line in &script {
            writeln!(stdin, "{line}").unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), script.len());
    assert_eq!(lines[2]["done"], true);
    assert_eq!(lines[2]["reward_breakdown"]["total"], 1.0);

    let report = w.root.join("report");
    ok(&[
        "report",
        "--store",
        s(&w.store),
        "--queries",
        s(&w.queries),
        "--trajectories",
        s(&dump),
        "--out-dir",
        s(&report),
    ]);
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(report.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["final_pass"], 100.0);
    assert_eq!(metrics["episodes"], 1);
    for f in ["taxonomy.csv", "transitions.csv", "flops.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let transitions = std::fs::read_to_string(report.join("transitions.csv")).unwrap();
    assert!(transitions.starts_with("previous,start,"));
}

#[test]
fn train_toy_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = ok(&["train-toy", "--seed", "1", "--iterations", "5", "--out", s(&csv)]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["final_pass_rate"].is_number());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("iteration,"));
}
