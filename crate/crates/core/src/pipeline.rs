//! One problem, end to end, in one of the five modes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::candidate::{CandidateModel, Provenance};
use crate::carm::{self, ExtractedProfile, RetrievalConfig, RetrievalSource};
use crate::correction::{self, CorrectionConfig, CorrectionDeps, CorrectionInput, RoundTrace};
use crate::gateway::{template, CallContext, CallCounts, CallLedger, GatewayError, LlmGateway, Slots};
use crate::harness::{
    judge, CaseOutcome, EvalResult, Expectation, HarnessError, SolvedRule, SolverHarness, Status, TestCase, Verdict,
};
use crate::ontology::{ConstraintProfile, Ontology};
use crate::store::{CorrectionStore, Exemplar, ExemplarStore};
use crate::tot::{self, ExploreError, ExploreInput, ExploreStatus, ToTConfig, TreeTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemStatement {
    pub id: String,
    #[serde(default)]
    pub category: String,
    pub description: String,
    #[serde(default)]
    pub input_format: String,
    pub test_cases: Vec<TestCase>,
}

impl ProblemStatement {
    /// The text substituted for `{problem}` in every template.
    pub fn prompt_text(&self) -> String {
        let description = self.description.trim();
        let input_format = self.input_format.trim();
        if input_format.is_empty() {
            description.to_string()
        } else {
            format!("{description}\n\nInput format:\n{input_format}")
        }
    }

    fn check_case_count(&self) {
        let n = self.test_cases.len();
        if !(2..=5).contains(&n) {
            log::warn!(
                "problem {} has {n} test case(s); benchmark problems carry 2 to 5",
                self.id
            );
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_problem(path: &Path) -> Result<ProblemStatement, DatasetError> {
    let p: ProblemStatement = serde_json::from_str(&read(path)?).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    p.check_case_count();
    Ok(p)
}

/// A directory of `*.json` problem files (sorted by file name) or one JSON
/// Lines file.
pub fn load_dataset(path: &Path) -> Result<Vec<ProblemStatement>, DatasetError> {
    let problems = if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files.iter().map(|f| load_problem(f)).collect::<Result<Vec<_>, _>>()?
    } else {
        let text = read(path)?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: ProblemStatement = serde_json::from_str(line).map_err(|e| DatasetError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            p.check_case_count();
            out.push(p);
        }
        out
    };
    let mut seen = std::collections::HashSet::new();
    for p in &problems {
        if !seen.insert(p.id.as_str()) {
            return Err(DatasetError::DuplicateId(p.id.clone()));
        }
    }
    Ok(problems)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Cot,
    Rag,
    Carm,
    CarmTot,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Direct, Mode::Cot, Mode::Rag, Mode::Carm, Mode::CarmTot];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Cot => "cot",
            Mode::Rag => "rag",
            Mode::Carm => "carm",
            Mode::CarmTot => "carm_tot",
        }
    }

    pub fn needs_knowledge_base(self) -> bool {
        matches!(self, Mode::Rag | Mode::Carm | Mode::CarmTot)
    }

    pub fn uses_correction(self) -> bool {
        matches!(self, Mode::Carm | Mode::CarmTot)
    }

    pub fn uses_tot(self) -> bool {
        self == Mode::CarmTot
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected direct, cot, rag, carm or carm_tot)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Solved,
    Failed,
    InfraError,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Solved => "SOLVED",
            Outcome::Failed => "FAILED",
            Outcome::InfraError => "INFRA_ERROR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExemplar {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub candidate: CandidateModel,
    pub eval: EvalResult,
}

/// Counters for one problem. Deterministic for a scripted run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemCounters {
    pub llm_calls: u64,
    pub modeling_generations: u64,
    /// Evaluations of a whole candidate.
    pub evaluations: u64,
    /// Runner invocations: one per (candidate, case).
    pub solver_calls: u64,
    pub carm_retrievals: u64,
    pub correction_rounds: u32,
    pub tot_nodes: u64,
    /// Largest completion in tokens, any template.
    pub max_completion_tokens: u64,
}

/// Measured durations for one problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemTiming {
    pub wall_ms: f64,
    pub generation_ms: f64,
    pub max_call_ms: f64,
    /// Longest single evaluation (all cases of one candidate).
    pub max_eval_ms: f64,
    /// Longest retrieval event: the initial analyzer call plus retrieval, or
    /// one correction-exemplar selection.
    pub max_carm_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub problem_id: String,
    pub category: String,
    pub mode: Mode,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The answer could not be checked (direct mode without checkers).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unverifiable: bool,
    pub n_cases: usize,
    pub final_score: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ExtractedProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_source: Option<RetrievalSource>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<RetrievedExemplar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Attempt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_status: Option<ExploreStatus>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correction: Vec<RoundTrace>,
    pub rounds_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_model: Option<CandidateModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<EvalResult>,
    pub counters: ProblemCounters,
    pub calls: CallCounts,
    pub timing: ProblemTiming,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

impl ProblemReport {
    fn new(p: &ProblemStatement, mode: Mode) -> Self {
        Self {
            problem_id: p.id.clone(),
            category: p.category.clone(),
            mode,
            outcome: Outcome::Failed,
            error: None,
            unverifiable: false,
            n_cases: p.test_cases.len(),
            final_score: 0,
            profile: None,
            retrieval_source: None,
            retrieved: Vec::new(),
            initial: None,
            tree: None,
            explore_status: None,
            correction: Vec::new(),
            rounds_used: 0,
            final_model: None,
            final_eval: None,
            counters: ProblemCounters::default(),
            calls: CallCounts::default(),
            timing: ProblemTiming::default(),
            config: None,
        }
    }

    /// Evaluations with their durations, in the order they ran.
    fn eval_durations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(tree) = &self.tree {
            out.extend(tree.nodes.iter().map(|n| n.eval_ms));
        }
        out.extend(self.correction.iter().filter(|r| r.eval.is_some()).map(|r| r.eval_ms));
        out
    }
}

/// Everything a run needs besides the problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub mode: Option<Mode>,
    pub retrieval: RetrievalConfig,
    pub correction: CorrectionConfig,
    pub tot: ToTConfig,
    pub solved_rule: SolvedRule,
    /// Fence label of the modeling language.
    pub language: Option<String>,
}

impl PipelineSettings {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Carm)
    }

    pub fn language(&self) -> &str {
        self.language.as_deref().unwrap_or("python")
    }
}

pub struct Pipeline {
    pub gateway: Arc<LlmGateway>,
    pub harness: SolverHarness,
    pub ontology: Ontology,
    pub knowledge_base: Option<ExemplarStore>,
    pub correction_db: Option<CorrectionStore>,
    pub settings: PipelineSettings,
    /// Leave the problem itself out of its own few-shot examples.
    pub exclude_self: bool,
}

/// Aborts the flow with an infrastructure error.
struct Infra(String);

impl From<GatewayError> for Infra {
    fn from(e: GatewayError) -> Self {
        Infra(format!("gateway: {e}"))
    }
}

impl From<HarnessError> for Infra {
    fn from(e: HarnessError) -> Self {
        Infra(format!("harness: {e}"))
    }
}

impl From<carm::RetrievalError> for Infra {
    fn from(e: carm::RetrievalError) -> Self {
        Infra(format!("retrieval: {e}"))
    }
}

/// Stand-in evaluation for a generation that produced no code.
fn empty_response_eval(cases: &[TestCase]) -> EvalResult {
    EvalResult::from_cases(
        cases
            .iter()
            .map(|c| CaseOutcome {
                name: c.name.clone(),
                verdict: Verdict {
                    status: Status::RuntimeError,
                    solution: None,
                    objective: None,
                    solver_log: "the model returned an empty response; there was no code to run".into(),
                    wall_ms: 0.0,
                },
                passed: false,
                detail: Some("empty response".into()),
            })
            .collect(),
    )
}

struct Run<'a> {
    pipeline: &'a Pipeline,
    problem: &'a ProblemStatement,
    text: String,
    ctx: CallContext<'a>,
    report: ProblemReport,
}

impl<'a> Run<'a> {
    fn gateway(&self) -> &'a LlmGateway {
        &self.pipeline.gateway
    }

    fn exclude(&self) -> Option<&'a str> {
        self.pipeline.exclude_self.then_some(self.problem.id.as_str())
    }

    fn knowledge_base(&self) -> Result<&'a ExemplarStore, Infra> {
        self.pipeline
            .knowledge_base
            .as_ref()
            .ok_or_else(|| Infra(format!("mode {} needs a knowledge base", self.report.mode)))
    }

    fn record_retrieval(&mut self, hits: &[(&Exemplar, f64)], source: RetrievalSource) {
        self.report.retrieval_source = Some(source);
        self.report.retrieved = hits
            .iter()
            .map(|(e, s)| RetrievedExemplar {
                id: e.id.clone(),
                score: *s,
            })
            .collect();
        self.report.counters.carm_retrievals += 1;
    }

    /// Generates one candidate and evaluates it.
    fn generate(&mut self, template_id: &str, slots: &Slots) -> Result<Attempt, Infra> {
        let response = self.gateway().complete(template_id, slots, self.ctx)?;
        let provenance = Provenance {
            template_id: template_id.to_string(),
            ..Provenance::default()
        };
        let cases = &self.problem.test_cases;
        Ok(
            match CandidateModel::from_response(&response, self.pipeline.settings.language(), provenance.clone()) {
                Ok(candidate) => {
                    let started = Instant::now();
                    let eval = self.pipeline.harness.evaluate(&candidate, cases)?;
                    self.report.timing.max_eval_ms = self
                        .report
                        .timing
                        .max_eval_ms
                        .max(started.elapsed().as_secs_f64() * 1e3);
                    self.report.counters.evaluations += 1;
                    Attempt { candidate, eval }
                }
                Err(_) => Attempt {
                    candidate: CandidateModel {
                        completion_tokens: response.completion_tokens,
                        ..CandidateModel::new("", provenance)
                    },
                    eval: empty_response_eval(cases),
                },
            },
        )
    }

    fn finish_with(&mut self, attempt: Attempt) {
        let rule = self.pipeline.settings.solved_rule;
        self.report.outcome = if attempt.eval.is_solved(rule) {
            Outcome::Solved
        } else {
            Outcome::Failed
        };
        self.report.final_score = attempt.eval.score;
        self.report.final_model = Some(attempt.candidate);
        self.report.final_eval = Some(attempt.eval);
    }

    fn profile_and_retrieve(&mut self) -> Result<(ConstraintProfile, String), Infra> {
        let kb = self.knowledge_base()?;
        let started = Instant::now();
        let extracted = carm::extract_profile(&self.text, self.gateway(), &self.pipeline.ontology, self.ctx)?;
        let profile = extracted.profile.clone();
        self.report.profile = Some(extracted);
        let retrieval = carm::carm_retrieve(
            &profile,
            &self.problem.description,
            kb,
            &self.pipeline.settings.retrieval,
            self.exclude(),
            self.gateway(),
            self.ctx,
        )?;
        let examples = carm::format_examples(retrieval.exemplars());
        let hits = retrieval.hits.clone();
        self.record_retrieval(&hits, retrieval.source);
        self.report.timing.max_carm_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok((profile, examples))
    }

    fn correct(&mut self, profile: &ConstraintProfile, start: Attempt) -> Result<(), Infra> {
        let p = self.pipeline;
        let input = CorrectionInput {
            problem_text: &self.text,
            problem_profile: profile,
            cases: &self.problem.test_cases,
            language: p.settings.language(),
            solved_rule: p.settings.solved_rule,
        };
        let deps = CorrectionDeps {
            store: p.correction_db.as_ref(),
            ontology: &p.ontology,
            gateway: &p.gateway,
            harness: &p.harness,
        };
        match correction::correction_loop(
            &input,
            start.candidate,
            start.eval,
            &p.settings.correction,
            &deps,
            self.ctx,
        ) {
            Ok(outcome) => {
                self.report.rounds_used = outcome.rounds_used;
                self.report.correction = outcome.rounds;
                self.finish_with(Attempt {
                    candidate: outcome.model,
                    eval: outcome.eval,
                });
                Ok(())
            }
            Err(e) => {
                self.report.rounds_used = e.rounds.len() as u32;
                self.report.correction = e.rounds;
                Err(Infra(format!("correction: {}", e.cause)))
            }
        }
    }

    fn run_direct(&mut self) -> Result<(), Infra> {
        let mut slots = Slots::new();
        slots.insert("problem", self.text.clone());
        let response = self.gateway().complete(template::DIRECT, &slots, self.ctx)?;
        let answer = response
            .text
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| serde_json::from_str::<Value>(l.trim()).ok());
        let candidate = CandidateModel {
            completion_tokens: response.completion_tokens,
            ..CandidateModel::new(
                response.text.clone(),
                Provenance {
                    template_id: template::DIRECT.to_string(),
                    ..Provenance::default()
                },
            )
        };
        let cases = &self.problem.test_cases;
        let all_checkers = !cases.is_empty() && cases.iter().all(|c| matches!(c.expectation, Expectation::Checker(_)));
        if !all_checkers {
            self.report.unverifiable = true;
            self.report.outcome = Outcome::Failed;
            self.report.final_model = Some(candidate);
            return Ok(());
        }
        let verdict = Verdict {
            status: if answer.is_some() {
                Status::Sat
            } else {
                Status::RuntimeError
            },
            objective: answer.as_ref().and_then(|a| a.as_number().cloned()),
            solution: answer,
            solver_log: String::new(),
            wall_ms: 0.0,
        };
        let timeout = Duration::from_secs_f64(self.pipeline.harness.limits().time_limit_s.max(1.0));
        let mut outcomes = Vec::new();
        for case in cases {
            let (passed, detail) = judge(case, &verdict, timeout).map_err(|e| Infra(e.to_string()))?;
            outcomes.push(CaseOutcome {
                name: case.name.clone(),
                verdict: verdict.clone(),
                passed,
                detail,
            });
        }
        self.finish_with(Attempt {
            candidate,
            eval: EvalResult::from_cases(outcomes),
        });
        Ok(())
    }

    fn run_cot(&mut self) -> Result<(), Infra> {
        let mut slots = Slots::new();
        slots.insert("problem", self.text.clone());
        let attempt = self.generate(template::COT_ONE_SHOT, &slots)?;
        self.report.initial = Some(attempt.clone());
        self.finish_with(attempt);
        Ok(())
    }

    fn run_rag(&mut self) -> Result<(), Infra> {
        let kb = self.knowledge_base()?;
        let started = Instant::now();
        let k = self.pipeline.settings.retrieval.top_k;
        let hits = carm::rag_retrieve(
            &self.problem.description,
            kb,
            k,
            self.exclude(),
            self.gateway(),
            self.ctx,
        )?;
        let examples = carm::format_examples(hits.iter().map(|(e, _)| *e));
        self.record_retrieval(&hits, RetrievalSource::Rag);
        self.report.timing.max_carm_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut slots = Slots::new();
        slots.insert("examples", examples);
        slots.insert("problem", self.text.clone());
        let attempt = self.generate(template::RAG_FEW_SHOT, &slots)?;
        self.report.initial = Some(attempt.clone());
        self.finish_with(attempt);
        Ok(())
    }

    fn run_carm(&mut self) -> Result<(), Infra> {
        let (profile, examples) = self.profile_and_retrieve()?;
        let mut slots = Slots::new();
        slots.insert("profile", profile.render());
        slots.insert("examples", examples);
        slots.insert("problem", self.text.clone());
        let attempt = self.generate(template::CARM_FEW_SHOT, &slots)?;
        self.report.initial = Some(attempt.clone());
        self.correct(&profile, attempt)
    }

    fn run_carm_tot(&mut self) -> Result<(), Infra> {
        let (profile, examples) = self.profile_and_retrieve()?;
        let p = self.pipeline;
        let input = ExploreInput {
            problem_text: &self.text,
            examples: &examples,
            cases: &self.problem.test_cases,
            language: p.settings.language(),
        };
        let exploration = match tot::explore(&input, &p.settings.tot, &p.gateway, &p.harness, self.ctx) {
            Ok(e) => e,
            Err(ExploreError::NoCandidates { trace }) => {
                self.report.tree = Some(trace);
                return Err(Infra("tree search produced no candidate".into()));
            }
            Err(ExploreError::Harness(e)) => return Err(e.into()),
        };
        let best = exploration.best_node();
        let start = Attempt {
            candidate: best.candidate.clone(),
            eval: best.eval.clone(),
        };
        self.report.explore_status = Some(exploration.status);
        self.report.tree = Some(exploration.trace);
        self.report.initial = Some(start.clone());
        self.correct(&profile, start)
    }
}

impl Pipeline {
    pub fn new(
        gateway: Arc<LlmGateway>,
        harness: SolverHarness,
        ontology: Ontology,
        settings: PipelineSettings,
    ) -> Self {
        Self {
            gateway,
            harness,
            ontology,
            knowledge_base: None,
            correction_db: None,
            settings,
            exclude_self: true,
        }
    }

    pub fn with_knowledge_base(mut self, store: ExemplarStore) -> Self {
        self.knowledge_base = Some(store);
        self
    }

    pub fn with_correction_db(mut self, store: CorrectionStore) -> Self {
        self.correction_db = Some(store);
        self
    }

    /// Runs one problem. Failures of any kind end up in the report.
    pub fn solve_problem(&self, problem: &ProblemStatement) -> ProblemReport {
        let mode = self.settings.mode();
        let ledger = CallLedger::new();
        let started = Instant::now();
        let mut run = Run {
            pipeline: self,
            problem,
            text: problem.prompt_text(),
            ctx: CallContext::new(&problem.id, &ledger),
            report: ProblemReport::new(problem, mode),
        };
        let result = if problem.test_cases.is_empty() && mode != Mode::Direct {
            Err(Infra("problem has no test cases".into()))
        } else {
            match mode {
                Mode::Direct => run.run_direct(),
                Mode::Cot => run.run_cot(),
                Mode::Rag => run.run_rag(),
                Mode::Carm => run.run_carm(),
                Mode::CarmTot => run.run_carm_tot(),
            }
        };
        let mut report = run.report;
        if let Err(Infra(message)) = result {
            log::warn!("{}: {message}", problem.id);
            report.outcome = Outcome::InfraError;
            report.error = Some(message);
        }

        let calls = ledger.counts();
        let timings = ledger.timings();
        let extra_evals = report.eval_durations().len() as u64;
        let c = &mut report.counters;
        c.llm_calls = calls.llm_calls;
        c.modeling_generations = calls.modeling_generations;
        c.max_completion_tokens = calls.max_completion_tokens;
        c.correction_rounds = report.rounds_used;
        c.carm_retrievals += report.correction.iter().filter(|r| r.exemplar_id.is_some()).count() as u64;
        c.tot_nodes = report.tree.as_ref().map_or(0, |t| t.visited() as u64);
        c.evaluations += extra_evals;
        c.solver_calls = c.evaluations * report.n_cases as u64;
        let t = &mut report.timing;
        for d in report.correction.iter().map(|r| r.retrieval_ms) {
            t.max_carm_ms = t.max_carm_ms.max(d);
        }
        if let Some(tree) = &report.tree {
            for n in &tree.nodes {
                t.max_eval_ms = t.max_eval_ms.max(n.eval_ms);
            }
        }
        for r in report.correction.iter().filter(|r| r.eval.is_some()) {
            t.max_eval_ms = t.max_eval_ms.max(r.eval_ms);
        }
        t.generation_ms = timings.generation_ms();
        t.max_call_ms = timings.max_call_ms();
        report.calls = calls;
        report.timing.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        report
    }

    /// Solves every problem with up to `workers` running at once. Reports
    /// come back in input order.
    pub fn solve_all(&self, problems: &[ProblemStatement], workers: usize) -> Vec<ProblemReport> {
        let workers = workers.max(1).min(problems.len().max(1));
        if workers == 1 {
            return problems.iter().map(|p| self.solve_problem(p)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<ProblemReport>>> = Mutex::new(vec![None; problems.len()]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= problems.len() {
                        break;
                    }
                    let r = self.solve_problem(&problems[i]);
                    slots.lock().expect("report slots poisoned")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("report slots poisoned")
            .into_iter()
            .map(|r| r.expect("every problem solved"))
            .collect()
    }
}
