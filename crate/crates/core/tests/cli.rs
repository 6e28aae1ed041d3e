mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use profilecp::bench::strip_nondeterministic;
use profilecp::gateway::Script;
use profilecp::pipeline::{Mode, ProblemReport};
use profilecp::store::ExemplarRecord;
use serde_json::{json, Value};

const TSP_PROFILE: &str = "[\"Circuit\", \"Sum\", \"Element\", \"Minimum\"]";

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_profilecp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn solve_ws(model: &str) -> Workspace {
    let ws = Workspace::new();
    let mut s = Script::default();
    s.push("analyzer", TSP_PROFILE);
    s.push("carm_few_shot", fenced(model));
    for _ in 0..4 {
        s.push("correction", fenced(model));
    }
    ws.write_script(&s);
    write_json(&ws.path("p.json"), &problem("tsp", "routing", 3));
    ws.write_config(Mode::Carm, json!({}));
    ws
}

#[test]
fn solve_all_pass_exits_zero() {
    let ws = solve_ws(RIGHT);
    let out = cli(
        &["solve", "--config", "config.json", "--problem", "p.json"],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: ProblemReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report.counters.llm_calls, 2);
    assert!(report.config.is_some());
}

#[test]
fn solve_never_pass_exits_one() {
    let ws = solve_ws(WRONG);
    let out = cli(
        &[
            "solve",
            "--config",
            "config.json",
            "--problem",
            "p.json",
            "--out",
            "r.json",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let report: ProblemReport = serde_json::from_str(&std::fs::read_to_string(ws.path("r.json")).unwrap()).unwrap();
    assert_eq!(report.rounds_used, 4);
    assert!(stdout(&out).is_empty());
}

#[test]
fn missing_runner_cmd_exits_three_naming_the_key() {
    let ws = solve_ws(RIGHT);
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("config.json")).unwrap()).unwrap();
    cfg["paths"].as_object_mut().unwrap().remove("runner_cmd");
    write_json(&ws.path("config.json"), &cfg);
    let out = cli(
        &["solve", "--config", "config.json", "--problem", "p.json"],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("runner_cmd"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_three() {
    let ws = solve_ws(RIGHT);
    ws.write_config(Mode::Carm, json!({"retrieval": {"top_n": 3}}));
    let out = cli(
        &["solve", "--config", "config.json", "--problem", "p.json"],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("top_n"), "{}", stderr(&out));
}

#[test]
fn flag_overrides_mode() {
    let ws = solve_ws(WRONG);
    let out = cli(
        &[
            "solve",
            "--config",
            "config.json",
            "--problem",
            "p.json",
            "--mode",
            "cot",
            "--script",
            "cot.json",
        ],
        ws.dir.path(),
    );
    // the override script does not exist
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let mut s = Script::default();
    s.push("cot_one_shot", fenced(RIGHT));
    write_json(&ws.path("cot.json"), &s);
    let out = cli(
        &[
            "solve",
            "--config",
            "config.json",
            "--problem",
            "p.json",
            "--mode",
            "cot",
            "--script",
            "cot.json",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: ProblemReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report.mode, Mode::Cot);
}

fn bench_ws() -> Workspace {
    let ws = Workspace::new();
    let mut s = Script::default();
    let problems: Vec<_> = (0..4)
        .map(|i| problem(&format!("b{i}"), if i < 2 { "x" } else { "y" }, 2))
        .collect();
    for (i, p) in problems.iter().enumerate() {
        s.push(format!("{}/analyzer", p.id), TSP_PROFILE);
        let code = if i % 2 == 0 { RIGHT } else { WRONG };
        s.push(format!("{}/carm_few_shot", p.id), fenced(code));
        for _ in 0..4 {
            s.push(format!("{}/correction", p.id), fenced(code));
        }
    }
    ws.write_script(&s);
    ws.write_dataset(&problems);
    ws.write_config(Mode::Carm, json!({"paths": {"output_dir": "runs"}}));
    ws
}

#[test]
fn bench_half_solvable_reports_fifty_percent() {
    let ws = bench_ws();
    let out = cli(&["bench", "--config", "config.json"], ws.dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dir = ws.path("runs/dataset-carm");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["sa_percent"], json!(50.0));
    assert_eq!(report["summary"]["solved"], json!(2));
    for i in 0..4 {
        assert!(dir.join(format!("problems/b{i}.json")).exists());
    }
    assert!(dir.join("report.txt").exists());
    assert!(stdout(&out).contains("50.0"), "{}", stdout(&out));
}

#[test]
fn bench_rerun_is_identical_outside_timing() {
    let ws = bench_ws();
    for out in ["a", "b"] {
        let o = cli(
            &["bench", "--config", "config.json", "--out-dir", out, "--run-id", "r"],
            ws.dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &str| -> Value {
        let text = std::fs::read_to_string(ws.path(d).join("r/report.json")).unwrap();
        strip_nondeterministic(serde_json::from_str(&text).unwrap())
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn bench_with_missing_runner_exits_two() {
    let ws = bench_ws();
    let out = cli(
        &[
            "bench",
            "--config",
            "config.json",
            "--runner-cmd",
            "/nonexistent/runner --flag",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("runs/dataset-carm/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["infra_errors"], json!(4));
}

#[test]
fn bench_through_subprocess_runner() {
    let ws = bench_ws();
    let runner = env!("CARGO_BIN_EXE_profilecp-stub-runner");
    let out = cli(
        &["bench", "--config", "config.json", "--runner-cmd", runner],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("runs/dataset-carm/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["solved"], json!(2));
}

fn read_kb(path: &Path) -> Vec<ExemplarRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn index_complete_file_is_byte_identical() {
    let ws = Workspace::new();
    let out = cli(
        &["index", "--in", "kb.jsonl", "--out", "kb2.jsonl", "--embeddings"],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(ws.path("kb.jsonl")).unwrap(),
        std::fs::read(ws.path("kb2.jsonl")).unwrap()
    );
}

#[test]
fn index_fills_profile_from_analyzer() {
    let ws = Workspace::new();
    let mut rows = kb_records();
    rows[0].profile = None;
    write_jsonl(&ws.path("raw.jsonl"), &rows);
    let mut s = Script::default();
    s.push("analyzer", "[\"Circuit\", \"Knapsack\"]");
    ws.write_script(&s);
    ws.write_config(Mode::Carm, json!({}));
    let out = cli(
        &[
            "index",
            "--in",
            "raw.jsonl",
            "--out",
            "kb2.jsonl",
            "--config",
            "config.json",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let got = read_kb(&ws.path("kb2.jsonl"));
    assert_eq!(
        got[0].profile,
        Some(vec!["Circuit".to_string(), "Knapsack".to_string()])
    );
    assert_eq!(got[1..], rows[1..]);
}

#[test]
fn index_without_embeddings_leaves_record_and_warns() {
    let ws = Workspace::new();
    let mut rows = kb_records();
    rows[2].embedding = None;
    write_jsonl(&ws.path("raw.jsonl"), &rows);
    let out = cli(&["index", "--in", "raw.jsonl", "--out", "kb2.jsonl"], ws.dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("no embedding"), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(ws.path("raw.jsonl")).unwrap(),
        std::fs::read(ws.path("kb2.jsonl")).unwrap()
    );

    let out = cli(
        &["index", "--in", "raw.jsonl", "--out", "kb3.jsonl", "--embeddings"],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let got = read_kb(&ws.path("kb3.jsonl"));
    assert_eq!(got[2].embedding.as_ref().map(Vec::len), Some(256));
}

#[test]
fn index_correction_store() {
    let ws = Workspace::new();
    let mut rows = correction_records();
    rows[1].error_embedding = None;
    write_jsonl(&ws.path("raw.jsonl"), &rows);
    let out = cli(
        &[
            "index",
            "--in",
            "raw.jsonl",
            "--out",
            "c2.jsonl",
            "--kind",
            "correction",
            "--embeddings",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(std::fs::read_to_string(ws.path("c2.jsonl"))
        .unwrap()
        .contains("error_embedding"));
}

#[test]
fn index_bad_store_exits_three() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.jsonl"), "{\"id\": 3}\n").unwrap();
    let out = cli(&["index", "--in", "bad.jsonl", "--out", "x.jsonl"], ws.dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn inspect_retrieval_prints_both_rankings() {
    let ws = Workspace::new();
    ws.write_script(&Script::default());
    ws.write_config(Mode::Carm, json!({}));
    write_json(&ws.path("p.json"), &problem("tsp", "routing", 2));
    let out = cli(
        &[
            "inspect-retrieval",
            "--config",
            "config.json",
            "--problem",
            "p.json",
            "--profile",
            "Circuit,Sum,Element,Minimum",
        ],
        ws.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("constraint-aware"), "{text}");
    assert!(text.contains("embedding"), "{text}");
    let first = text.lines().find(|l| l.starts_with("1 ")).unwrap();
    assert!(first.contains("vrp") && first.contains("0.7500"), "{first}");
}

#[test]
fn replay_scenario_and_render() {
    let ws = Workspace::new();
    let mut s = Script::default();
    s.push("analyzer", TSP_PROFILE);
    s.push("carm_few_shot", fenced(WRONG));
    s.push("correction", fenced(RIGHT));
    ws.write_script(&s);
    let scenario = json!({
        "config": {
            "mode": "carm",
            "paths": {"knowledge_base": "kb.jsonl", "correction_db": "corrections.jsonl", "runner_cmd": "@stub"},
            "generation": {"kind": "scripted", "script": "script.json"},
            "embedding": {"dim": EMBED_DIM}
        },
        "problems": [problem_json(&problem("tsp", "routing", 2))],
        "expect": {"outcomes": {"tsp": "SOLVED"}, "max_llm_calls": 3}
    });
    write_json(&ws.path("scenario.json"), &scenario);
    let out = cli(&["replay", "scenario.json"], ws.dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("round 1"), "{}", stdout(&out));

    let mut failing = scenario.clone();
    failing["expect"]["max_llm_calls"] = json!(2);
    write_json(&ws.path("scenario2.json"), &failing);
    let out = cli(&["replay", "scenario2.json"], ws.dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("expectation failed"), "{}", stderr(&out));

    let ws2 = solve_ws(RIGHT);
    let out = cli(
        &[
            "solve",
            "--config",
            "config.json",
            "--problem",
            "p.json",
            "--out",
            "r.json",
        ],
        ws2.dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let out = cli(&["replay", "--render", "r.json"], ws2.dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("tsp  [routing]  mode carm  SOLVED"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn replay_render_of_run_report() {
    let ws = bench_ws();
    assert_eq!(
        cli(&["bench", "--config", "config.json"], ws.dir.path()).status.code(),
        Some(0)
    );
    let out = cli(&["replay", "--render", "runs/dataset-carm/report.json"], ws.dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        std::fs::read_to_string(ws.path("runs/dataset-carm/report.txt")).unwrap()
    );
}

#[test]
fn bad_arguments_exit_three() {
    let ws = Workspace::new();
    assert_eq!(cli(&["solve"], ws.dir.path()).status.code(), Some(3));
    assert_eq!(cli(&["frobnicate"], ws.dir.path()).status.code(), Some(3));
    assert_eq!(cli(&["--help"], ws.dir.path()).status.code(), Some(0));
}
