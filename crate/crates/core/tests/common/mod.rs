//! Fixtures shared by the integration tests: problems whose verdicts are
//! steered by stub directives, a small knowledge base, scripted pipelines.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use profilecp::gateway::{HashingEmbedder, LlmGateway, Script};
use profilecp::harness::{Expectation, ObjectiveValue, SolverHarness, SolverLimits, TestCase};
use profilecp::ontology::Ontology;
use profilecp::pipeline::{Mode, Pipeline, PipelineSettings, ProblemStatement};
use profilecp::store::{CorrectionRecord, CorrectionStore, ExemplarRecord, ExemplarStore};
use profilecp::stub::StubRunner;
use serde_json::{json, Value};

pub const EMBED_DIM: usize = 64;
pub const TARGET: i64 = 7;

/// Model source accepted on every case.
pub const RIGHT: &str = "# stub: * -> SAT objective=7 solution={\"x\":7}\nprint(7)";
/// Model source that runs but reports the wrong objective.
pub const WRONG: &str = "# stub: * -> SAT objective=3 solution={\"x\":3}\nprint(3)";
/// Model source that crashes.
pub const CRASH: &str = "# stub: * -> RAISE IndexError: list index out of range\nx = []\nx[1]";

pub fn fenced(code: &str) -> String {
    format!("Here is the model.\n\n```python\n{code}\n```\n")
}

/// Source passing exactly the cases whose bit is set in `mask`.
pub fn pattern_model(mask: u32, n: usize) -> String {
    let mut lines: Vec<String> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| format!("# stub: case={i} -> SAT objective=7 solution={{\"x\":7}}"))
        .collect();
    lines.push("# stub: * -> SAT objective=0 solution={\"x\":0}".to_string());
    lines.join("\n")
}

pub fn cases(n: usize) -> Vec<TestCase> {
    (0..n)
        .map(|i| TestCase {
            name: format!("case{i}"),
            data: json!({"case": i, "n": 3 + i}),
            expectation: Expectation::ObjectiveEquals(ObjectiveValue::Integer(TARGET)),
        })
        .collect()
}

pub fn problem(id: &str, category: &str, n_cases: usize) -> ProblemStatement {
    ProblemStatement {
        id: id.to_string(),
        category: category.to_string(),
        description: format!(
            "Problem {id}. A salesman visits every city exactly once and returns home; minimize the total distance of the tour."
        ),
        input_format: "n: number of cities; dist: n by n matrix".to_string(),
        test_cases: cases(n_cases),
    }
}

pub fn problem_json(p: &ProblemStatement) -> Value {
    serde_json::to_value(p).expect("problem serializes")
}

fn embed(text: &str) -> Vec<f32> {
    HashingEmbedder::new(EMBED_DIM).embed_text(text)
}

pub fn kb_records() -> Vec<ExemplarRecord> {
    let rows: [(&str, &[&str], &str); 5] = [
        (
            "tpp",
            &["Circuit", "Element"],
            "A purchaser tours markets buying goods; route plus purchase cost.",
        ),
        (
            "jobshop",
            &["NoOverlap", "Cumulative"],
            "Jobs run on machines in order; minimize the makespan.",
        ),
        (
            "sudoku",
            &["AllDifferent"],
            "Fill a grid so every row, column and box holds distinct digits.",
        ),
        (
            "knapsack",
            &["Sum"],
            "Pick items under a weight capacity to maximize value.",
        ),
        (
            "vrp",
            &["Circuit", "Sum", "Element"],
            "Vehicles leave a depot and serve customers within capacity.",
        ),
    ];
    rows.iter()
        .map(|(id, profile, desc)| ExemplarRecord {
            id: id.to_string(),
            description: desc.to_string(),
            solution_code: format!("# solution for {id}\nmodel = Model()"),
            profile: Some(profile.iter().map(|s| s.to_string()).collect()),
            embedding: Some(embed(desc)),
            chunk_embeddings: None,
            category: Some("routing".to_string()),
        })
        .collect()
}

pub fn correction_records() -> Vec<CorrectionRecord> {
    let rows: [(&str, &[&str], &str); 3] = [
        (
            "fix-index",
            &["Element"],
            "IndexError from an off-by-one array index; shift indices to start at zero.",
        ),
        (
            "fix-objective",
            &["Sum", "Circuit"],
            "Wrong objective: the tour cost omitted the return edge.",
        ),
        (
            "fix-sched",
            &["NoOverlap"],
            "Tasks overlapped because intervals were not linked to machines.",
        ),
    ];
    rows.iter()
        .map(|(id, profile, path)| CorrectionRecord {
            id: id.to_string(),
            description: format!("exemplar {id}"),
            incorrect_code: "x = wrong()".to_string(),
            correction_path: path.to_string(),
            correct_code: "x = right()".to_string(),
            profile: Some(profile.iter().map(|s| s.to_string()).collect()),
            error_embedding: Some(embed(path)),
            category: None,
        })
        .collect()
}

pub fn knowledge_base(ontology: &Ontology) -> ExemplarStore {
    let records = kb_records().into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
    ExemplarStore::from_records(records, ontology, "fixture").expect("fixture store is valid")
}

pub fn correction_store(ontology: &Ontology) -> CorrectionStore {
    let records = correction_records()
        .into_iter()
        .enumerate()
        .map(|(i, r)| (i + 1, r))
        .collect();
    CorrectionStore::from_records(records, ontology, "fixture").expect("fixture store is valid")
}

pub fn settings(mode: Mode) -> PipelineSettings {
    PipelineSettings {
        mode: Some(mode),
        ..PipelineSettings::default()
    }
}

pub fn harness() -> SolverHarness {
    SolverHarness::new(Arc::new(StubRunner), SolverLimits::default())
}

/// A pipeline over a scripted backend, the in-process stub runner and the
/// fixture stores.
pub fn scripted_pipeline(settings: PipelineSettings, script: Script) -> Pipeline {
    let ontology = Ontology::default_ontology();
    let kb = knowledge_base(&ontology);
    let db = correction_store(&ontology);
    let gateway = Arc::new(LlmGateway::scripted(script, EMBED_DIM));
    Pipeline::new(gateway, harness(), ontology, settings)
        .with_knowledge_base(kb)
        .with_correction_db(db)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let text: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// A directory holding a config, a script, stores and a dataset, laid out
/// the way the CLI expects them.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        write_jsonl(&ws.path("kb.jsonl"), &kb_records());
        write_jsonl(&ws.path("corrections.jsonl"), &correction_records());
        ws
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_script(&self, script: &Script) -> PathBuf {
        let p = self.path("script.json");
        write_json(&p, script);
        p
    }

    pub fn write_dataset(&self, problems: &[ProblemStatement]) -> PathBuf {
        let p = self.path("dataset.jsonl");
        write_jsonl(&p, problems);
        p
    }

    /// Config with relative paths; `extra` is merged over the defaults.
    pub fn write_config(&self, mode: Mode, extra: Value) -> PathBuf {
        let mut cfg = json!({
            "mode": mode.as_str(),
            "paths": {
                "dataset": "dataset.jsonl",
                "knowledge_base": "kb.jsonl",
                "correction_db": "corrections.jsonl",
                "runner_cmd": "@stub"
            },
            "generation": {"kind": "scripted", "script": "script.json"},
            "embedding": {"kind": "hashing", "dim": EMBED_DIM}
        });
        merge(&mut cfg, extra);
        let p = self.path("config.json");
        write_json(&p, &cfg);
        p
    }
}

pub fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}
