//! Tree-of-thoughts search over alternative models, scored by the solver.

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateModel, Provenance};
use crate::gateway::{template, CallContext, LlmGateway, Slots};
use crate::harness::{EvalResult, HarnessError, SolverHarness, TestCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToTConfig {
    /// W: root thoughts.
    pub initial_thoughts: usize,
    /// m: nodes kept per level, and children per kept node.
    pub beam: usize,
    /// n: depth of the tree, counting the root level.
    pub max_depth: usize,
}

impl Default for ToTConfig {
    fn default() -> Self {
        Self {
            initial_thoughts: 2,
            beam: 2,
            max_depth: 2,
        }
    }
}

impl ToTConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_thoughts == 0 {
            return Err("tot.initial_thoughts must be at least 1".into());
        }
        if self.beam == 0 {
            return Err("tot.beam must be at least 1".into());
        }
        Ok(())
    }

    /// Expansion levels below the roots.
    pub fn expansion_levels(&self) -> usize {
        self.max_depth.saturating_sub(1)
    }
}

/// Closed-form node count: W·(mⁿ−1)/(m−1), W·n when m = 1, W when n = 0.
pub fn predicted_node_count(cfg: &ToTConfig) -> u64 {
    let (w, m, n) = (cfg.initial_thoughts as u64, cfg.beam as u64, cfg.max_depth as u32);
    if n == 0 {
        return w;
    }
    if m == 1 {
        return w * n as u64;
    }
    w * (m.pow(n) - 1) / (m - 1)
}

/// Nodes the beam schedule actually generates when nothing stops it early
/// and every generation succeeds.
pub fn scheduled_node_count(cfg: &ToTConfig) -> u64 {
    let mut level = cfg.initial_thoughts as u64;
    let mut total = level;
    for _ in 0..cfg.expansion_levels() {
        level = level.min(cfg.beam as u64) * cfg.beam as u64;
        total += level;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtKind {
    GlobalConstraintSelection,
    VariableDefinitionStrategy,
    AuxiliaryVariableIntroduction,
}

impl ThoughtKind {
    pub const ALL: [ThoughtKind; 3] = [
        ThoughtKind::GlobalConstraintSelection,
        ThoughtKind::VariableDefinitionStrategy,
        ThoughtKind::AuxiliaryVariableIntroduction,
    ];

    /// Kind of the `i`-th generated node.
    pub fn nth(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    pub fn directive(self) -> &'static str {
        match self {
            ThoughtKind::GlobalConstraintSelection => {
                "Reconsider which global constraints express the problem's structure (for example AllDifferent, Cumulative, Circuit, NoOverlap) and use them in place of decomposed formulations where they fit."
            }
            ThoughtKind::VariableDefinitionStrategy => {
                "Reconsider how decision variables are defined: their indexing, their domains, and whether a different viewpoint (successor, position, assignment) makes the constraints simpler."
            }
            ThoughtKind::AuxiliaryVariableIntroduction => {
                "Introduce auxiliary variables where they simplify the model, for example to name intermediate quantities, channel between viewpoints, or state the objective directly."
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub depth: usize,
    pub thought_kind: ThoughtKind,
    pub candidate: CandidateModel,
    pub eval: EvalResult,
    pub eval_ms: f64,
}

impl ThoughtNode {
    pub fn score(&self) -> usize {
        self.eval.score
    }
}

/// A generation that produced no node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub depth: usize,
    pub thought_kind: ThoughtKind,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeTrace {
    pub nodes: Vec<ThoughtNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_attempts: Vec<FailedAttempt>,
    pub stopped_early: bool,
}

impl TreeTrace {
    pub fn visited(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the best node: highest score, then fewer completion tokens,
    /// then earliest.
    pub fn best(&self) -> Option<usize> {
        (0..self.nodes.len()).min_by(|&a, &b| rank(&self.nodes[a], &self.nodes[b]))
    }
}

fn rank(a: &ThoughtNode, b: &ThoughtNode) -> std::cmp::Ordering {
    b.score()
        .cmp(&a.score())
        .then(a.candidate.completion_tokens.cmp(&b.candidate.completion_tokens))
        .then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreStatus {
    /// Some node passed every case.
    Solved,
    /// Tree exhausted; the best node passes some cases.
    Exhausted,
    /// Tree exhausted and every node scored 0.
    AllBranchesFailed,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub trace: TreeTrace,
    pub best: usize,
    pub status: ExploreStatus,
}

impl Exploration {
    pub fn best_node(&self) -> &ThoughtNode {
        &self.trace.nodes[self.best]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("no thought produced a candidate model")]
    NoCandidates { trace: TreeTrace },
    #[error(transparent)]
    Harness(HarnessError),
}

impl ExploreError {
    pub fn trace(&self) -> Option<&TreeTrace> {
        match self {
            ExploreError::NoCandidates { trace } => Some(trace),
            ExploreError::Harness(_) => None,
        }
    }
}

pub struct ExploreInput<'a> {
    pub problem_text: &'a str,
    pub examples: &'a str,
    pub cases: &'a [TestCase],
    pub language: &'a str,
}

struct Search<'a> {
    input: &'a ExploreInput<'a>,
    gateway: &'a LlmGateway,
    harness: &'a SolverHarness,
    ctx: CallContext<'a>,
    trace: TreeTrace,
    generated: usize,
}

impl Search<'_> {
    /// Generates and evaluates one node. Returns whether it passed everything.
    fn visit(&mut self, parent: Option<usize>, depth: usize) -> Result<bool, HarnessError> {
        let kind = ThoughtKind::nth(self.generated);
        self.generated += 1;
        let parent_code = parent.map_or("(none)".to_string(), |p| self.trace.nodes[p].candidate.source.clone());
        let mut slots = Slots::new();
        slots.insert("thought_directive", kind.directive().to_string());
        slots.insert("examples", self.input.examples.to_string());
        slots.insert("problem", self.input.problem_text.to_string());
        slots.insert("parent_code", parent_code);

        let fail = |error: String| FailedAttempt {
            parent,
            depth,
            thought_kind: kind,
            error,
        };
        let response = match self.gateway.complete(template::TOT_EXPAND, &slots, self.ctx) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: thought generation failed: {e}", self.ctx.problem_id);
                self.trace.failed_attempts.push(fail(e.to_string()));
                return Ok(false);
            }
        };
        let id = self.trace.nodes.len();
        let provenance = Provenance {
            template_id: template::TOT_EXPAND.to_string(),
            round: 0,
            node_id: Some(id),
            exemplar_id: None,
        };
        let candidate = match CandidateModel::from_response(&response, self.input.language, provenance) {
            Ok(c) => c,
            Err(e) => {
                self.trace.failed_attempts.push(fail(e.to_string()));
                return Ok(false);
            }
        };
        let started = std::time::Instant::now();
        let eval = self.harness.evaluate(&candidate, self.input.cases)?;
        let eval_ms = started.elapsed().as_secs_f64() * 1e3;
        let solved = eval.all_pass();
        self.trace.nodes.push(ThoughtNode {
            id,
            parent,
            depth,
            thought_kind: kind,
            candidate,
            eval,
            eval_ms,
        });
        Ok(solved)
    }

    fn run(&mut self, cfg: &ToTConfig) -> Result<(), HarnessError> {
        let mut level: Vec<usize> = Vec::new();
        for _ in 0..cfg.initial_thoughts {
            let before = self.trace.nodes.len();
            if self.visit(None, 0)? {
                self.trace.stopped_early = true;
                return Ok(());
            }
            if self.trace.nodes.len() > before {
                level.push(before);
            }
        }
        for depth in 1..=cfg.expansion_levels() {
            level.sort_by(|&a, &b| rank(&self.trace.nodes[a], &self.trace.nodes[b]));
            level.truncate(cfg.beam);
            let mut next = Vec::new();
            for &parent in &level {
                for _ in 0..cfg.beam {
                    let before = self.trace.nodes.len();
                    if self.visit(Some(parent), depth)? {
                        self.trace.stopped_early = true;
                        return Ok(());
                    }
                    if self.trace.nodes.len() > before {
                        next.push(before);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            level = next;
        }
        Ok(())
    }
}

/// Searches the thought tree and returns the best node found.
pub fn explore(
    input: &ExploreInput<'_>,
    cfg: &ToTConfig,
    gateway: &LlmGateway,
    harness: &SolverHarness,
    ctx: CallContext<'_>,
) -> Result<Exploration, ExploreError> {
    let mut search = Search {
        input,
        gateway,
        harness,
        ctx,
        trace: TreeTrace::default(),
        generated: 0,
    };
    search.run(cfg).map_err(ExploreError::Harness)?;
    let trace = search.trace;
    let Some(best) = trace.best() else {
        return Err(ExploreError::NoCandidates { trace });
    };
    let node = &trace.nodes[best];
    let status = if node.eval.all_pass() {
        ExploreStatus::Solved
    } else if node.score() == 0 {
        ExploreStatus::AllBranchesFailed
    } else {
        ExploreStatus::Exhausted
    };
    Ok(Exploration { trace, best, status })
}
