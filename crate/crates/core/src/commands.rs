//! Command-line entry points. Exit codes: 0 success or SOLVED, 1 FAILED,
//! 2 infrastructure error, 3 configuration or input error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchReport, Timestamps};
use crate::carm::{self, jaccard_similarity};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::gateway::{CallContext, GatewayError, LlmGateway, Script, ScriptedBackend, TemplateSet};
use crate::harness::CommandSpec;
use crate::ontology::{ConstraintProfile, Ontology};
use crate::pipeline::{self, Mode, Outcome, ProblemReport, ProblemStatement};
use crate::store::{
    correction_embedding_text, description_chunks, read_records, write_records, CorrectionRecord, Embedding,
    ExemplarRecord, ExemplarStore,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INFRA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "profilecp",
    version,
    about = "Constraint-profile retrieval, tree search and solver-guided repair for generated CP models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fill in missing profiles and embeddings of a store file.
    Index(IndexArgs),
    /// Solve one problem and emit its report.
    Solve(SolveArgs),
    /// Run a dataset and write a report directory.
    Bench(BenchArgs),
    /// Show what retrieval returns for one problem.
    InspectRetrieval(InspectArgs),
    /// Run a self-contained scripted scenario, or re-render a saved report.
    Replay(ReplayArgs),
}

/// Flags that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub knowledge_base: Option<PathBuf>,
    #[arg(long)]
    pub correction_db: Option<PathBuf>,
    #[arg(long)]
    pub runner_cmd: Option<String>,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub time_limit_s: Option<f64>,
}

impl clap::builder::ValueParserFactory for Mode {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Mode>())
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(p) = &self.knowledge_base {
            cfg.paths.knowledge_base = Some(p.clone());
        }
        if let Some(p) = &self.correction_db {
            cfg.paths.correction_db = Some(p.clone());
        }
        if let Some(c) = &self.runner_cmd {
            cfg.paths.runner_cmd = Some(CommandSpec::Line(c.clone()));
        }
        if let Some(s) = &self.script {
            cfg.generation.script = Some(s.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(t) = self.time_limit_s {
            cfg.solver.time_limit_s = t;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StoreKind {
    Exemplar,
    Correction,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "exemplar")]
    pub kind: StoreKind,
    /// Compute missing embeddings.
    #[arg(long, default_value_t = false)]
    pub embeddings: bool,
    /// Backends for profiles and embeddings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub problem: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub problem: PathBuf,
    /// Use this comma-separated profile instead of calling the analyzer.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Scenario file.
    pub scenario: Option<PathBuf>,
    /// Render a saved report (problem or run) as text; no backends involved.
    #[arg(long, conflicts_with = "scenario")]
    pub render: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Index(a) => command_index(&a),
        Command::Solve(a) => command_solve(&a),
        Command::Bench(a) => command_bench(&a),
        Command::InspectRetrieval(a) => command_inspect(&a),
        Command::Replay(a) => command_replay(&a),
    }
}

fn config_error(e: &ConfigError) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn input_error(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn outcome_code(o: Outcome) -> i32 {
    match o {
        Outcome::Solved => EXIT_OK,
        Outcome::Failed => EXIT_FAILED,
        Outcome::InfraError => EXIT_INFRA,
    }
}

pub fn command_solve(a: &SolveArgs) -> i32 {
    let cfg = match load_config(&a.config, &a.overrides) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let problem = match pipeline::load_problem(&a.problem) {
        Ok(p) => p,
        Err(e) => return input_error(e),
    };
    let pipeline = match cfg.pipeline() {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let mut report = pipeline.solve_problem(&problem);
    report.config = Some(cfg.frozen());
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, json) {
                return input_error(format!("{}: {e}", path.display()));
            }
        }
        None => print!("{json}"),
    }
    outcome_code(report.outcome)
}

/// Runs a dataset and writes the report directory. Returns the report and
/// the directory it was written to.
pub fn run_bench(
    cfg: &RunConfig,
    dataset: &Path,
    out_dir: &Path,
    run_id: &str,
) -> Result<(BenchReport, PathBuf), String> {
    let problems = pipeline::load_dataset(dataset).map_err(|e| e.to_string())?;
    let pipeline = cfg.pipeline().map_err(|e| e.to_string())?;
    let started = Timestamps::now_unix_s();
    let reports = pipeline.solve_all(&problems, cfg.workers);
    let finished = Timestamps::now_unix_s();
    let report = BenchReport::build(
        run_id,
        &dataset
            .file_name()
            .map_or_else(|| dataset.display().to_string(), |n| n.to_string_lossy().into_owned()),
        cfg.mode,
        &reports,
        &cfg.correction,
        &cfg.tot,
        cfg.frozen(),
        Timestamps {
            started_unix_s: started,
            finished_unix_s: finished,
        },
    )
    .map_err(|e| e.to_string())?;
    let dir = out_dir.join(run_id);
    bench::write_run(&dir, &report, &reports).map_err(|e| format!("{}: {e}", dir.display()))?;
    Ok((report, dir))
}

pub fn command_bench(a: &BenchArgs) -> i32 {
    let mut cfg = match load_config(&a.config, &a.overrides) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some(d) = &a.dataset {
        cfg.paths.dataset = Some(d.clone());
    }
    let Some(dataset) = cfg.paths.dataset.clone() else {
        return config_error(&ConfigError::new("paths.dataset", "required for bench"));
    };
    let out_dir = a
        .out_dir
        .clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let run_id = a.run_id.clone().unwrap_or_else(|| {
        let stem = dataset
            .file_stem()
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
        format!("{}-{}", stem, cfg.mode)
    });
    match run_bench(&cfg, &dataset, &out_dir, &run_id) {
        Ok((report, dir)) => {
            print!("{}", report.render_text());
            println!("\nwritten to {}", dir.display());
            if !report.timing.all_within_bound {
                log::warn!("some problems exceeded the cost upper bound; see report.json timing");
            }
            if report.summary.infra_errors > 0 {
                EXIT_INFRA
            } else {
                EXIT_OK
            }
        }
        Err(e) => input_error(e),
    }
}

/// Why indexing stopped: bad input (exit 3) or a backend failure (exit 2).
enum IndexError {
    Input(String),
    Backend(String),
}

impl From<GatewayError> for IndexError {
    fn from(e: GatewayError) -> Self {
        IndexError::Backend(e.to_string())
    }
}

/// Indexing work shared by both record kinds.
struct Indexer<'a> {
    gateway: Option<&'a LlmGateway>,
    ontology: Ontology,
    embeddings: bool,
}

impl Indexer<'_> {
    fn gateway(&self, what: &str, id: &str) -> Result<&LlmGateway, IndexError> {
        self.gateway
            .ok_or_else(|| IndexError::Input(format!("record `{id}` needs {what} and no backend is configured")))
    }

    fn profile(&self, slot: &mut Option<Vec<String>>, id: &str, description: &str) -> Result<bool, IndexError> {
        if slot.is_some() {
            return Ok(false);
        }
        let gw = self.gateway("a profile", id)?;
        let p = carm::extract_profile(description, gw, &self.ontology, CallContext::default())?;
        if let Some(w) = &p.warning {
            log::warn!("record `{id}`: {w}");
        }
        *slot = Some(p.profile.names());
        Ok(true)
    }

    /// Embeds `texts` when the slot is empty and embeddings are enabled.
    fn embed(&self, missing: bool, id: &str, texts: Vec<String>) -> Result<Option<Vec<Embedding>>, IndexError> {
        if !missing {
            return Ok(None);
        }
        if !self.embeddings {
            log::warn!("record `{id}` has no embedding; pass --embeddings to compute it");
            return Ok(None);
        }
        let gw = self.gateway("an embedding", id)?;
        let vectors = texts
            .iter()
            .map(|t| gw.embed(t, CallContext::default()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(vectors))
    }

    fn exemplars(&self, records: &mut [ExemplarRecord]) -> Result<bool, IndexError> {
        let mut changed = false;
        for r in records.iter_mut() {
            changed |= self.profile(&mut r.profile, &r.id, &r.description)?;
            if let Some(vectors) = self.embed(r.embedding.is_none(), &r.id, description_chunks(&r.description))? {
                let mut it = vectors.into_iter();
                r.embedding = it.next();
                let rest: Vec<_> = it.collect();
                r.chunk_embeddings = (!rest.is_empty()).then_some(rest);
                changed = true;
            }
        }
        Ok(changed)
    }

    fn corrections(&self, records: &mut [CorrectionRecord]) -> Result<bool, IndexError> {
        let mut changed = false;
        for r in records.iter_mut() {
            changed |= self.profile(&mut r.profile, &r.id, &r.description)?;
            let text = correction_embedding_text(r).to_string();
            if let Some(v) = self.embed(r.error_embedding.is_none(), &r.id, vec![text])? {
                r.error_embedding = v.into_iter().next();
                changed = true;
            }
        }
        Ok(changed)
    }
}

fn index_file<T>(
    input: &Path,
    output: &Path,
    fill: impl FnOnce(&mut [T]) -> Result<bool, IndexError>,
) -> Result<(), IndexError>
where
    T: for<'de> Deserialize<'de> + Serialize,
{
    let original = std::fs::read(input).map_err(|e| IndexError::Input(format!("{}: {e}", input.display())))?;
    let records = read_records::<T>(input).map_err(|e| IndexError::Input(e.to_string()))?;
    let mut records: Vec<T> = records.into_iter().map(|(_, r)| r).collect();
    if fill(&mut records)? {
        write_records(output, &records).map_err(|e| IndexError::Input(e.to_string()))
    } else {
        // nothing to add: keep the input bytes exactly
        std::fs::write(output, original).map_err(|e| IndexError::Input(format!("{}: {e}", output.display())))
    }
}

pub fn command_index(a: &IndexArgs) -> i32 {
    let cfg = match &a.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => return config_error(&e),
        },
        None => RunConfig::default(),
    };
    let ontology = match cfg.load_ontology() {
        Ok(o) => o,
        Err(e) => return config_error(&e),
    };
    // without a generation backend only embeddings can be filled
    let gateway = match cfg.gateway() {
        Ok(g) => Some(g),
        Err(e) if cfg.generation.script.is_some() || cfg.generation.kind == BackendKind::Http => {
            return config_error(&e)
        }
        Err(_) => match cfg.embedder() {
            Ok(emb) => Some(LlmGateway::new(
                TemplateSet::builtin(),
                Arc::new(ScriptedBackend::new(Script::default())),
                emb,
            )),
            Err(e) => return config_error(&e),
        },
    };
    let indexer = Indexer {
        gateway: gateway.as_ref(),
        ontology,
        embeddings: a.embeddings,
    };
    let result = match a.kind {
        StoreKind::Exemplar => index_file(&a.input, &a.output, |r| indexer.exemplars(r)),
        StoreKind::Correction => index_file(&a.input, &a.output, |r| indexer.corrections(r)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(IndexError::Input(e)) => input_error(e),
        Err(IndexError::Backend(e)) => {
            eprintln!("error: {e}");
            EXIT_INFRA
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub profile: Vec<String>,
}

/// Text table of ranked exemplars.
pub fn render_retrieval(title: &str, rows: &[RetrievalRow]) -> String {
    let mut out = format!("{title}\n{:<5} {:<28} {:>7}  profile\n", "rank", "id", "score");
    for r in rows {
        out.push_str(&format!(
            "{:<5} {:<28} {:>7.4}  {}\n",
            r.rank,
            r.id,
            r.score,
            r.profile.join(", ")
        ));
    }
    out
}

pub fn command_inspect(a: &InspectArgs) -> i32 {
    let mut cfg = match RunConfig::load(&a.config) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    a.overrides.apply(&mut cfg);
    if let Some(k) = a.top_k {
        cfg.retrieval.top_k = k;
    }
    let Some(kb_path) = cfg.paths.knowledge_base.clone() else {
        return config_error(&ConfigError::new(
            "paths.knowledge_base",
            "required for inspect-retrieval",
        ));
    };
    let problem = match pipeline::load_problem(&a.problem) {
        Ok(p) => p,
        Err(e) => return input_error(e),
    };
    let ontology = match cfg.load_ontology() {
        Ok(o) => o,
        Err(e) => return config_error(&e),
    };
    let store = match ExemplarStore::load(&kb_path, &ontology) {
        Ok(s) => s,
        Err(e) => return input_error(e),
    };
    let gw = match cfg.gateway() {
        Ok(g) => g,
        Err(e) => return config_error(&e),
    };
    let ctx = CallContext::default();
    let profile: ConstraintProfile = match &a.profile {
        Some(list) => {
            let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            let (p, unknown) = ConstraintProfile::from_names(&names, &ontology);
            if !unknown.is_empty() {
                log::warn!("ignoring unknown constraint types: {}", unknown.join(", "));
            }
            p
        }
        None => match carm::extract_profile(&problem.prompt_text(), &gw, &ontology, ctx) {
            Ok(p) => p.profile,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INFRA;
            }
        },
    };
    println!("profile: {}", profile.render());
    let exclude = cfg.exclude_self.then_some(problem.id.as_str());
    let rows = |hits: Vec<(&crate::store::Exemplar, f64)>| -> Vec<RetrievalRow> {
        hits.into_iter()
            .enumerate()
            .map(|(i, (e, s))| RetrievalRow {
                rank: i + 1,
                id: e.id.clone(),
                score: s,
                profile: e.profile.names(),
            })
            .collect()
    };
    match carm::carm_retrieve(
        &profile,
        &problem.description,
        &store,
        &cfg.retrieval,
        exclude,
        &gw,
        ctx,
    ) {
        Ok(r) => print!(
            "{}",
            render_retrieval(&format!("\nconstraint-aware ({:?})", r.source), &rows(r.hits))
        ),
        Err(e) => println!("\nconstraint-aware: {e}"),
    }
    match carm::rag_retrieve(&problem.description, &store, cfg.retrieval.top_k, exclude, &gw, ctx) {
        Ok(hits) => {
            let mut table = rows(hits);
            for row in &mut table {
                // show the overlap alongside the cosine for comparison
                let e = store.get(&row.id).expect("hit comes from the store");
                row.profile
                    .push(format!("(jaccard {:.2})", jaccard_similarity(&profile, &e.profile)));
            }
            print!("{}", render_retrieval("\nembedding", &table));
        }
        Err(e) => println!("\nembedding: {e}"),
    }
    EXIT_OK
}

/// A self-contained scripted run: inline config, problems, and optional
/// expectations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub config: serde_json::Value,
    pub problems: Vec<ProblemStatement>,
    #[serde(default)]
    pub expect: ScenarioExpect,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioExpect {
    pub outcomes: std::collections::BTreeMap<String, Outcome>,
    pub max_llm_calls: Option<u64>,
}

/// Runs a scenario and checks its expectations. Returns the reports and the
/// list of violated expectations.
pub fn run_scenario(path: &Path) -> Result<(Vec<ProblemReport>, Vec<String>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg: RunConfig = serde_json::from_value(scenario.config).map_err(|e| format!("config: {e}"))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate().map_err(|e| e.to_string())?;
    let pipeline = cfg.pipeline().map_err(|e| e.to_string())?;
    let reports = pipeline.solve_all(&scenario.problems, cfg.workers);
    let mut violations = Vec::new();
    for r in &reports {
        if let Some(want) = scenario.expect.outcomes.get(&r.problem_id) {
            if *want != r.outcome {
                violations.push(format!("{}: expected {want}, got {}", r.problem_id, r.outcome));
            }
        }
        if let Some(max) = scenario.expect.max_llm_calls {
            if r.counters.llm_calls > max {
                violations.push(format!(
                    "{}: {} LLM calls, at most {max} expected",
                    r.problem_id, r.counters.llm_calls
                ));
            }
        }
    }
    Ok((reports, violations))
}

/// Text rendering of one problem report.
pub fn render_problem(r: &ProblemReport) -> String {
    let mut out = format!(
        "{}  [{}]  mode {}  {}  score {}/{}  rounds {}\n",
        r.problem_id, r.category, r.mode, r.outcome, r.final_score, r.n_cases, r.rounds_used
    );
    if let Some(e) = &r.error {
        out.push_str(&format!("  error: {e}\n"));
    }
    if let Some(p) = &r.profile {
        out.push_str(&format!("  profile: {}\n", p.profile.render()));
    }
    if !r.retrieved.is_empty() {
        let ids: Vec<String> = r
            .retrieved
            .iter()
            .map(|e| format!("{} ({:.2})", e.id, e.score))
            .collect();
        out.push_str(&format!("  retrieved: {}\n", ids.join(", ")));
    }
    if let Some(t) = &r.tree {
        out.push_str(&format!("  tree: {} node(s)\n", t.visited()));
        for n in &t.nodes {
            out.push_str(&format!(
                "    #{} parent {} depth {} {:?} score {}\n",
                n.id,
                n.parent.map_or("-".to_string(), |p| p.to_string()),
                n.depth,
                n.thought_kind,
                n.score()
            ));
        }
    }
    for round in &r.correction {
        out.push_str(&format!(
            "  round {}: exemplar {} score {}{}\n",
            round.round,
            round.exemplar_id.as_deref().unwrap_or("-"),
            round.score().map_or("-".to_string(), |s| s.to_string()),
            round.error.as_ref().map_or(String::new(), |e| format!(" ({e})"))
        ));
    }
    out.push_str(&format!(
        "  calls: {} llm, {} evaluations, {} retrievals\n",
        r.counters.llm_calls, r.counters.evaluations, r.counters.carm_retrievals
    ));
    out
}

pub fn command_replay(a: &ReplayArgs) -> i32 {
    if let Some(path) = &a.render {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return input_error(format!("{}: {e}", path.display())),
        };
        if let Ok(run) = serde_json::from_str::<BenchReport>(&text) {
            print!("{}", run.render_text());
            return EXIT_OK;
        }
        return match serde_json::from_str::<ProblemReport>(&text) {
            Ok(r) => {
                print!("{}", render_problem(&r));
                EXIT_OK
            }
            Err(e) => input_error(format!("{}: not a report: {e}", path.display())),
        };
    }
    let Some(path) = &a.scenario else {
        return input_error("replay needs a scenario file or --render");
    };
    match run_scenario(path) {
        Ok((reports, violations)) => {
            for r in &reports {
                print!("{}", render_problem(r));
            }
            for v in &violations {
                eprintln!("expectation failed: {v}");
            }
            if !violations.is_empty() {
                EXIT_FAILED
            } else if reports.iter().any(|r| r.outcome == Outcome::InfraError) {
                EXIT_INFRA
            } else {
                EXIT_OK
            }
        }
        Err(e) => input_error(e),
    }
}
