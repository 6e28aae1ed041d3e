//! Runs candidate models against a problem's test cases and scores them.
//!
//! A model's score is the number of test cases it passes. Each case is sent
//! to a [`Runner`] independently; the runner protocol is one JSON request on
//! the child's stdin and one JSON response on its stdout.

use std::fmt;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use wait_timeout::ChildExt;

use crate::candidate::CandidateModel;

/// Default per-case solver time limit, seconds.
pub const DEFAULT_TIME_LIMIT_S: f64 = 20.0;
/// How many characters of the first failing case's log go into feedback.
pub const FEEDBACK_LOG_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveValue {
    Integer(i64),
    Rational { num: i64, den: i64 },
    Real(f64),
}

impl ObjectiveValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            ObjectiveValue::Integer(v) => v as f64,
            ObjectiveValue::Rational { num, den } => num as f64 / den as f64,
            ObjectiveValue::Real(v) => v,
        }
    }

    /// Integers compare exactly; anything else within 1e-6 relative.
    pub fn matches(&self, got: &Number) -> bool {
        match self {
            ObjectiveValue::Integer(v) => match got.as_i64() {
                Some(g) => g == *v,
                None => got.as_f64() == Some(*v as f64),
            },
            _ => {
                let Some(g) = got.as_f64() else { return false };
                let e = self.as_f64();
                (g - e).abs() <= 1e-6 * e.abs().max(1.0)
            }
        }
    }
}

impl fmt::Display for ObjectiveValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveValue::Integer(v) => write!(f, "{v}"),
            ObjectiveValue::Rational { num, den } => write!(f, "{num}/{den}"),
            ObjectiveValue::Real(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for ObjectiveValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ObjectiveValue::Integer(v) => s.serialize_i64(*v),
            ObjectiveValue::Rational { .. } => s.serialize_str(&self.to_string()),
            ObjectiveValue::Real(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ObjectiveValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match Value::deserialize(d)? {
            Value::Number(n) => Ok(match n.as_i64() {
                Some(i) => ObjectiveValue::Integer(i),
                None => ObjectiveValue::Real(n.as_f64().ok_or_else(|| D::Error::custom("bad number"))?),
            }),
            Value::String(s) => {
                let (num, den) = s
                    .split_once('/')
                    .ok_or_else(|| D::Error::custom(format!("expected `p/q`, got `{s}`")))?;
                let num: i64 = num.trim().parse().map_err(D::Error::custom)?;
                let den: i64 = den.trim().parse().map_err(D::Error::custom)?;
                if den == 0 {
                    return Err(D::Error::custom("zero denominator"));
                }
                Ok(ObjectiveValue::Rational { num, den })
            }
            other => Err(D::Error::custom(format!(
                "objective must be a number or `p/q`, got {other}"
            ))),
        }
    }
}

/// A command, given either as one whitespace-separated string or as argv.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandSpec {
    Line(String),
    Argv(Vec<String>),
}

impl CommandSpec {
    pub fn argv(&self) -> Vec<String> {
        match self {
            CommandSpec::Line(s) => s.split_whitespace().map(str::to_string).collect(),
            CommandSpec::Argv(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    ObjectiveEquals(ObjectiveValue),
    Satisfiable(bool),
    /// Command that reads `{"data", "solution", "objective"}` on stdin and
    /// exits 0 to accept.
    Checker(CommandSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub data: Value,
    pub expectation: Expectation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Sat,
    Unsat,
    Timeout,
    RuntimeError,
    ProtocolError,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Sat => "SAT",
            Status::Unsat => "UNSAT",
            Status::Timeout => "TIMEOUT",
            Status::RuntimeError => "RUNTIME_ERROR",
            Status::ProtocolError => "PROTOCOL_ERROR",
        })
    }
}

/// Request document sent to the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub code: String,
    pub data: Value,
    pub time_limit_s: f64,
}

/// Normalized outcome of one (model, instance) run. Also the runner's
/// response document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(default)]
    pub solution: Option<Value>,
    #[serde(default)]
    pub objective: Option<Number>,
    #[serde(default)]
    pub solver_log: String,
    #[serde(default)]
    pub wall_ms: f64,
}

impl Verdict {
    pub fn protocol_error(log: impl Into<String>, wall_ms: f64) -> Self {
        Self {
            status: Status::ProtocolError,
            solution: None,
            objective: None,
            solver_log: log.into(),
            wall_ms,
        }
    }

    /// Enforces the invariants a runner response must satisfy.
    fn normalized(mut self) -> Self {
        if self.status == Status::Sat && self.solution.as_ref().is_none_or(Value::is_null) {
            self.solver_log = format!("runner reported SAT without a solution\n{}", self.solver_log);
            self.status = Status::ProtocolError;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("runner unavailable: {0}")]
pub struct RunnerUnavailable(pub String);

pub trait Runner: Send + Sync {
    fn run(&self, request: &RunnerRequest) -> Result<Verdict, RunnerUnavailable>;
}

impl<F> Runner for F
where
    F: Fn(&RunnerRequest) -> Result<Verdict, RunnerUnavailable> + Send + Sync,
{
    fn run(&self, request: &RunnerRequest) -> Result<Verdict, RunnerUnavailable> {
        self(request)
    }
}

struct ChildOutput {
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    /// None when the child was killed for overrunning.
    exit: Option<std::process::ExitStatus>,
    wall_ms: f64,
}

fn run_child(
    argv: &[String],
    input: &[u8],
    deadline: Duration,
    memory_mb: Option<u64>,
) -> Result<ChildOutput, RunnerUnavailable> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| RunnerUnavailable("empty command".into()))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    if let Some(mb) = memory_mb {
        use std::os::unix::process::CommandExt;
        let bytes = mb.saturating_mul(1024 * 1024);
        // SAFETY: setrlimit is async-signal-safe and touches no shared state.
        unsafe {
            cmd.pre_exec(move || {
                let lim = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
    #[cfg(not(unix))]
    let _ = memory_mb;

    let started = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| RunnerUnavailable(format!("cannot start `{program}`: {e}")))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let input = input.to_vec();
    let writer = std::thread::spawn(move || {
        // a child that exits without reading its input is not our problem here
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let exit = match child
        .wait_timeout(deadline)
        .map_err(|e| RunnerUnavailable(format!("wait failed: {e}")))?
    {
        Some(status) => Some(status),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let _ = writer.join();
    Ok(ChildOutput {
        stdout: out_reader.join().unwrap_or_default(),
        stderr: err_reader.join().unwrap_or_default(),
        exit,
        wall_ms,
    })
}

/// Runner that spawns the configured command once per request.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    argv: Vec<String>,
    /// Extra time granted past the request's limit before the child is killed.
    grace: Duration,
    memory_mb: Option<u64>,
}

impl SubprocessRunner {
    pub fn new(argv: Vec<String>) -> Self {
        Self {
            argv,
            grace: Duration::from_secs(5),
            memory_mb: None,
        }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn with_memory_mb(mut self, mb: Option<u64>) -> Self {
        self.memory_mb = mb;
        self
    }

    pub fn argv(&self) -> &[String] {
        &self.argv
    }
}

impl Runner for SubprocessRunner {
    fn run(&self, request: &RunnerRequest) -> Result<Verdict, RunnerUnavailable> {
        let input = serde_json::to_vec(request).expect("request serializes");
        let deadline = Duration::from_secs_f64(request.time_limit_s.max(0.0)) + self.grace;
        let out = run_child(&self.argv, &input, deadline, self.memory_mb)?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        let Some(exit) = out.exit else {
            return Ok(Verdict {
                status: Status::Timeout,
                solution: None,
                objective: None,
                solver_log: format!("runner killed after {:.0} ms\n{stderr}", out.wall_ms),
                wall_ms: out.wall_ms.max(request.time_limit_s * 1e3),
            });
        };
        if !exit.success() {
            return Ok(Verdict::protocol_error(
                format!("runner exited with {exit}\n{stderr}"),
                out.wall_ms,
            ));
        }
        match serde_json::from_slice::<Verdict>(&out.stdout) {
            Ok(v) => Ok(v.normalized()),
            Err(e) => Ok(Verdict::protocol_error(
                format!(
                    "unreadable runner response ({e}): {}\n{stderr}",
                    String::from_utf8_lossy(&out.stdout)
                        .chars()
                        .take(200)
                        .collect::<String>()
                ),
                out.wall_ms,
            )),
        }
    }
}

/// Runs a checker command on a solution. `Ok(true)` iff it exits 0.
pub fn run_checker(
    cmd: &CommandSpec,
    data: &Value,
    solution: Option<&Value>,
    objective: Option<&Number>,
    timeout: Duration,
) -> Result<bool, RunnerUnavailable> {
    let input = serde_json::to_vec(&serde_json::json!({
        "data": data,
        "solution": solution,
        "objective": objective,
    }))
    .expect("checker input serializes");
    let out = run_child(&cmd.argv(), &input, timeout, None)?;
    Ok(out.exit.is_some_and(|s| s.success()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvedRule {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub verdict: Verdict,
    pub passed: bool,
    /// Why the case failed, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cases: Vec<CaseOutcome>,
    pub score: usize,
}

impl EvalResult {
    pub fn from_cases(cases: Vec<CaseOutcome>) -> Self {
        let score = cases.iter().filter(|c| c.passed).count();
        Self { cases, score }
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.cases.iter().map(|c| &c.verdict)
    }

    pub fn passed(&self) -> Vec<bool> {
        self.cases.iter().map(|c| c.passed).collect()
    }

    pub fn all_pass(&self) -> bool {
        !self.cases.is_empty() && self.score == self.cases.len()
    }

    pub fn is_solved(&self, rule: SolvedRule) -> bool {
        match rule {
            SolvedRule::All => self.all_pass(),
            SolvedRule::Any => self.score > 0,
        }
    }

    pub fn has_protocol_error(&self) -> bool {
        self.verdicts().any(|v| v.status == Status::ProtocolError)
    }

    /// Solver time spent on this evaluation, summed over cases.
    pub fn solver_ms(&self) -> f64 {
        self.verdicts().map(|v| v.wall_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    RunnerUnavailable(#[from] RunnerUnavailable),
    #[error("candidate model has no source")]
    EmptyModel,
    #[error("no test cases to evaluate")]
    NoCases,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverLimits {
    pub time_limit_s: f64,
    pub memory_mb: Option<u64>,
}

impl Default for SolverLimits {
    fn default() -> Self {
        Self {
            time_limit_s: DEFAULT_TIME_LIMIT_S,
            memory_mb: None,
        }
    }
}

/// Decides pass/fail for one case given its verdict.
pub fn judge(
    case: &TestCase,
    verdict: &Verdict,
    checker_timeout: Duration,
) -> Result<(bool, Option<String>), RunnerUnavailable> {
    let expect_sat = |v: &Verdict| -> Option<String> {
        (v.status != Status::Sat).then(|| format!("expected SAT, got {}", v.status))
    };
    Ok(match &case.expectation {
        Expectation::Satisfiable(true) => match expect_sat(verdict) {
            Some(msg) => (false, Some(msg)),
            None => (true, None),
        },
        Expectation::Satisfiable(false) => match verdict.status {
            Status::Unsat => (true, None),
            other => (false, Some(format!("expected UNSAT, got {other}"))),
        },
        Expectation::ObjectiveEquals(expected) => {
            if let Some(msg) = expect_sat(verdict) {
                (false, Some(msg))
            } else {
                match &verdict.objective {
                    None => (false, Some(format!("objective missing, expected {expected}"))),
                    Some(got) if expected.matches(got) => (true, None),
                    Some(got) => (
                        false,
                        Some(format!("objective mismatch: got {got}, expected {expected}")),
                    ),
                }
            }
        }
        Expectation::Checker(cmd) => {
            if let Some(msg) = expect_sat(verdict) {
                (false, Some(msg))
            } else if run_checker(
                cmd,
                &case.data,
                verdict.solution.as_ref(),
                verdict.objective.as_ref(),
                checker_timeout,
            )? {
                (true, None)
            } else {
                (false, Some("checker rejected the solution".to_string()))
            }
        }
    })
}

pub struct SolverHarness {
    runner: Arc<dyn Runner>,
    limits: SolverLimits,
    max_parallel: usize,
}

impl SolverHarness {
    pub fn new(runner: Arc<dyn Runner>, limits: SolverLimits) -> Self {
        Self {
            runner,
            limits,
            max_parallel: 1,
        }
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    pub fn limits(&self) -> SolverLimits {
        self.limits
    }

    fn evaluate_case(&self, source: &str, case: &TestCase) -> Result<CaseOutcome, RunnerUnavailable> {
        let request = RunnerRequest {
            code: source.to_string(),
            data: case.data.clone(),
            time_limit_s: self.limits.time_limit_s,
        };
        let verdict = self.runner.run(&request)?;
        let checker_timeout = Duration::from_secs_f64(self.limits.time_limit_s.max(1.0));
        let (passed, detail) = judge(case, &verdict, checker_timeout)?;
        Ok(CaseOutcome {
            name: case.name.clone(),
            verdict,
            passed,
            detail,
        })
    }

    /// Runs every case and scores the model by the number of passes.
    pub fn evaluate(&self, model: &CandidateModel, cases: &[TestCase]) -> Result<EvalResult, HarnessError> {
        if model.source.trim().is_empty() {
            return Err(HarnessError::EmptyModel);
        }
        if cases.is_empty() {
            return Err(HarnessError::NoCases);
        }
        let outcomes = if self.max_parallel <= 1 || cases.len() == 1 {
            cases
                .iter()
                .map(|c| self.evaluate_case(&model.source, c))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            let next = AtomicUsize::new(0);
            let slots: Mutex<Vec<Option<Result<CaseOutcome, RunnerUnavailable>>>> = Mutex::new(vec![None; cases.len()]);
            std::thread::scope(|s| {
                for _ in 0..self.max_parallel.min(cases.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= cases.len() {
                            break;
                        }
                        let r = self.evaluate_case(&model.source, &cases[i]);
                        slots.lock().expect("slots poisoned")[i] = Some(r);
                    });
                }
            });
            slots
                .into_inner()
                .expect("slots poisoned")
                .into_iter()
                .map(|r| r.expect("every case evaluated"))
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(EvalResult::from_cases(outcomes))
    }
}

/// Failing status lines only, one per failed case.
pub fn failing_status_lines(result: &EvalResult) -> Vec<String> {
    result
        .cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            format!(
                "case {}: {} - {}",
                c.name,
                c.verdict.status,
                c.detail.as_deref().unwrap_or("failed")
            )
        })
        .collect()
}

/// Deterministic solver feedback for the repair prompt.
pub fn summarize_feedback(result: &EvalResult) -> String {
    let n = result.n_cases();
    if result.all_pass() {
        return format!("ALL PASS ({n}/{n})");
    }
    let mut out = format!("FAILED ({}/{} passed)\n", result.score, n);
    for c in &result.cases {
        if c.passed {
            out.push_str(&format!("case {}: {} - pass\n", c.name, c.verdict.status));
        } else {
            out.push_str(&format!(
                "case {}: {} - {}\n",
                c.name,
                c.verdict.status,
                c.detail.as_deref().unwrap_or("failed")
            ));
        }
    }
    if let Some(first) = result.cases.iter().find(|c| !c.passed) {
        let log: String = first.verdict.solver_log.chars().take(FEEDBACK_LOG_CHARS).collect();
        if !log.trim().is_empty() {
            out.push_str(&format!("solver log ({}):\n{}\n", first.name, log));
        }
    }
    out.trim_end().to_string()
}
