//! Solver-guided repair with retrieved correction exemplars.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateModel, Provenance};
use crate::carm::jaccard_similarity;
use crate::gateway::{template, CallContext, GatewayError, LlmGateway, Slots};
use crate::harness::{
    failing_status_lines, summarize_feedback, EvalResult, HarnessError, SolvedRule, SolverHarness, TestCase,
};
use crate::ontology::{ConstraintProfile, Ontology};
use crate::store::{cosine_or_zero, CorrectionExemplar, CorrectionStore, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub max_rounds: u32,
    pub shortlist_k: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            max_rounds: 4,
            shortlist_k: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorContext {
    pub incorrect_code: String,
    pub feedback: String,
    pub inferred_profile: ConstraintProfile,
    pub embedding: Embedding,
}

/// Text the error context is embedded under.
pub fn error_context_text(result: &EvalResult) -> String {
    let mut text = summarize_feedback(result);
    for line in failing_status_lines(result) {
        text.push('\n');
        text.push_str(&line);
    }
    text
}

pub fn build_error_context(
    code: &str,
    result: &EvalResult,
    problem_profile: &ConstraintProfile,
    ontology: &Ontology,
    gateway: &LlmGateway,
    ctx: CallContext<'_>,
) -> Result<ErrorContext, GatewayError> {
    let feedback = summarize_feedback(result);
    let mut inferred_profile = problem_profile.clone();
    inferred_profile.union_with(&ontology.scan_text(&feedback));
    let embedding = gateway.embed(&error_context_text(result), ctx)?;
    Ok(ErrorContext {
        incorrect_code: code.to_string(),
        feedback,
        inferred_profile,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub id: String,
    pub cosine: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone)]
pub struct Selection<'s> {
    pub exemplar: &'s CorrectionExemplar,
    /// Stage-1 shortlist in cosine order, with each entry's stage-2 score.
    pub shortlist: Vec<ShortlistEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("correction store is empty")]
pub struct EmptyStore;

/// Shortlists by error-embedding cosine, then picks the highest profile
/// overlap. Ties go to the better cosine, then to store order.
pub fn select_correction_exemplar<'s>(
    c_err: &ErrorContext,
    store: &'s CorrectionStore,
    cfg: &CorrectionConfig,
) -> Result<Selection<'s>, EmptyStore> {
    if store.is_empty() {
        return Err(EmptyStore);
    }
    let mut stage1: Vec<(&CorrectionExemplar, f64)> = store
        .exemplars()
        .iter()
        .map(|e| {
            let cos = e
                .error_embedding
                .as_deref()
                .map_or(0.0, |v| cosine_or_zero(&c_err.embedding, v));
            (e, cos)
        })
        .collect();
    stage1.sort_by(|a, b| b.1.total_cmp(&a.1));
    stage1.truncate(cfg.shortlist_k.max(1));

    let shortlist: Vec<ShortlistEntry> = stage1
        .iter()
        .map(|(e, cos)| ShortlistEntry {
            id: e.id.clone(),
            cosine: *cos,
            jaccard: jaccard_similarity(&c_err.inferred_profile, &e.profile),
        })
        .collect();
    let mut best = 0;
    for (i, s) in shortlist.iter().enumerate().skip(1) {
        // shortlist is in cosine order, so strict improvement on Jaccard is
        // enough to respect both tie-breaks
        if s.jaccard > shortlist[best].jaccard {
            best = i;
        }
    }
    Ok(Selection {
        exemplar: stage1[best].0,
        shortlist,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum RoundError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model returned an empty response")]
    EmptyResponse,
}

/// One repair generation.
#[allow(clippy::too_many_arguments)]
pub fn correction_round(
    problem_text: &str,
    c_err: &ErrorContext,
    exemplar: Option<&CorrectionExemplar>,
    round: u32,
    language: &str,
    gateway: &LlmGateway,
    ctx: CallContext<'_>,
) -> Result<CandidateModel, RoundError> {
    let none = || "(none)".to_string();
    let mut slots = Slots::new();
    slots.insert(
        "exemplar_description",
        exemplar.map_or_else(none, |e| e.description.clone()),
    );
    slots.insert(
        "exemplar_incorrect_code",
        exemplar.map_or_else(none, |e| e.incorrect_code.clone()),
    );
    slots.insert(
        "exemplar_correction_path",
        exemplar.map_or_else(none, |e| e.correction_path.clone()),
    );
    slots.insert(
        "exemplar_correct_code",
        exemplar.map_or_else(none, |e| e.correct_code.clone()),
    );
    slots.insert("problem", problem_text.to_string());
    slots.insert("incorrect_code", c_err.incorrect_code.clone());
    slots.insert("solver_feedback", c_err.feedback.clone());
    let response = gateway.complete(template::CORRECTION, &slots, ctx)?;
    let provenance = Provenance {
        template_id: template::CORRECTION.to_string(),
        round,
        node_id: None,
        exemplar_id: exemplar.map(|e| e.id.clone()),
    };
    CandidateModel::from_response(&response, language, provenance).map_err(|_| RoundError::EmptyResponse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shortlist: Vec<ShortlistEntry>,
    pub feedback: String,
    /// Evaluation of the repaired model; absent when the round produced none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Embedding plus selection time.
    pub retrieval_ms: f64,
    pub eval_ms: f64,
}

impl RoundTrace {
    pub fn score(&self) -> Option<usize> {
        self.eval.as_ref().map(|e| e.score)
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    pub solved: bool,
    pub rounds_used: u32,
    /// The solving model, or the best-scoring one (earliest on ties).
    pub model: CandidateModel,
    pub eval: EvalResult,
    pub rounds: Vec<RoundTrace>,
}

impl CorrectionOutcome {
    /// Evaluations performed, counting the initial one.
    pub fn evaluations(&self) -> usize {
        1 + self.rounds.iter().filter(|r| r.eval.is_some()).count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorrectionCause {
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Harness(HarnessError),
}

#[derive(Debug, thiserror::Error)]
#[error("{cause}")]
pub struct CorrectionError {
    pub cause: CorrectionCause,
    pub rounds: Vec<RoundTrace>,
}

pub struct CorrectionInput<'a> {
    pub problem_text: &'a str,
    pub problem_profile: &'a ConstraintProfile,
    pub cases: &'a [TestCase],
    pub language: &'a str,
    pub solved_rule: SolvedRule,
}

pub struct CorrectionDeps<'a> {
    pub store: Option<&'a CorrectionStore>,
    pub ontology: &'a Ontology,
    pub gateway: &'a LlmGateway,
    pub harness: &'a SolverHarness,
}

/// Repairs `initial` until it is solved or the round budget runs out.
/// `initial_eval` is the evaluation of `initial`.
pub fn correction_loop(
    input: &CorrectionInput<'_>,
    initial: CandidateModel,
    initial_eval: EvalResult,
    cfg: &CorrectionConfig,
    deps: &CorrectionDeps<'_>,
    ctx: CallContext<'_>,
) -> Result<CorrectionOutcome, CorrectionError> {
    let mut rounds: Vec<RoundTrace> = Vec::new();
    let mut current = (initial, initial_eval);
    let mut best = current.clone();
    let mut rounds_used = 0;
    let fail = |cause, rounds| CorrectionError { cause, rounds };

    while !current.1.is_solved(input.solved_rule) && rounds_used < cfg.max_rounds {
        rounds_used += 1;
        let started = Instant::now();
        let c_err = match build_error_context(
            &current.0.source,
            &current.1,
            input.problem_profile,
            deps.ontology,
            deps.gateway,
            ctx,
        ) {
            Ok(c) => c,
            Err(e) => return Err(fail(CorrectionCause::Gateway(e), rounds)),
        };
        let selection = deps.store.and_then(|s| select_correction_exemplar(&c_err, s, cfg).ok());
        let retrieval_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut trace = RoundTrace {
            round: rounds_used,
            exemplar_id: selection.as_ref().map(|s| s.exemplar.id.clone()),
            shortlist: selection.as_ref().map(|s| s.shortlist.clone()).unwrap_or_default(),
            feedback: c_err.feedback.clone(),
            eval: None,
            source: None,
            error: None,
            retrieval_ms,
            eval_ms: 0.0,
        };
        let exemplar = selection.as_ref().map(|s| s.exemplar);
        let candidate = match correction_round(
            input.problem_text,
            &c_err,
            exemplar,
            rounds_used,
            input.language,
            deps.gateway,
            ctx,
        ) {
            Ok(c) => c,
            Err(RoundError::EmptyResponse) => {
                trace.error = Some(RoundError::EmptyResponse.to_string());
                rounds.push(trace);
                continue;
            }
            Err(RoundError::Gateway(e)) => {
                trace.error = Some(e.to_string());
                rounds.push(trace);
                return Err(fail(CorrectionCause::Gateway(e), rounds));
            }
        };
        let started = Instant::now();
        let eval = match deps.harness.evaluate(&candidate, input.cases) {
            Ok(e) => e,
            Err(e) => {
                trace.error = Some(e.to_string());
                rounds.push(trace);
                return Err(fail(CorrectionCause::Harness(e), rounds));
            }
        };
        trace.eval_ms = started.elapsed().as_secs_f64() * 1e3;
        trace.source = Some(candidate.source.clone());
        trace.eval = Some(eval.clone());
        rounds.push(trace);
        if eval.score > best.1.score {
            best = (candidate.clone(), eval.clone());
        }
        current = (candidate, eval);
    }

    let solved = current.1.is_solved(input.solved_rule);
    let (model, eval) = if solved { current } else { best };
    Ok(CorrectionOutcome {
        solved,
        rounds_used,
        model,
        eval,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Script;
    use crate::harness::{Expectation, SolverLimits};
    use crate::stub::StubRunner;
    use serde_json::json;
    use std::sync::Arc;

    fn profile(names: &[&str]) -> ConstraintProfile {
        ConstraintProfile::from_names(names, &Ontology::default_ontology()).0
    }

    fn corr(id: &str, names: &[&str], emb: Vec<f32>) -> CorrectionExemplar {
        CorrectionExemplar {
            id: id.into(),
            description: format!("d {id}"),
            incorrect_code: "bad".into(),
            correction_path: "fix".into(),
            correct_code: "good".into(),
            profile: profile(names),
            error_embedding: Some(emb),
            category: None,
        }
    }

    fn c_err(names: &[&str], emb: Vec<f32>) -> ErrorContext {
        ErrorContext {
            incorrect_code: "x".into(),
            feedback: "FAILED".into(),
            inferred_profile: profile(names),
            embedding: emb,
        }
    }

    #[test]
    fn overlap_inside_shortlist_wins() {
        let mut ex: Vec<_> = (0..10)
            .map(|i| corr(&format!("e{i}"), &["Knapsack"], vec![1.0, i as f32 * 0.1]))
            .collect();
        // e3 is the only one sharing a type and sits in the top four
        ex[3].profile = profile(&["Circuit"]);
        let store = CorrectionStore::from_exemplars(ex);
        let sel = select_correction_exemplar(
            &c_err(&["Circuit", "Sum"], vec![1.0, 0.0]),
            &store,
            &CorrectionConfig::default(),
        )
        .unwrap();
        let ids: Vec<_> = sel.shortlist.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["e0", "e1", "e2", "e3"]);
        assert_eq!(sel.exemplar.id, "e3");
    }

    #[test]
    fn zero_overlap_picks_stage1_leader() {
        let store = CorrectionStore::from_exemplars(vec![
            corr("a", &["Knapsack"], vec![0.0, 1.0]),
            corr("b", &["Knapsack"], vec![1.0, 0.0]),
        ]);
        let sel = select_correction_exemplar(
            &c_err(&["Circuit"], vec![1.0, 0.1]),
            &store,
            &CorrectionConfig::default(),
        )
        .unwrap();
        assert_eq!(sel.exemplar.id, "b");
    }

    #[test]
    fn empty_store() {
        let store = CorrectionStore::default();
        assert!(select_correction_exemplar(&c_err(&[], vec![1.0]), &store, &CorrectionConfig::default()).is_err());
    }

    fn cases() -> Vec<TestCase> {
        (0..2)
            .map(|i| TestCase {
                name: format!("c{i}"),
                data: json!({ "i": i }),
                expectation: Expectation::Satisfiable(true),
            })
            .collect()
    }

    const WRONG: &str = "```python\n# stub: * -> RAISE TypeError: bad\n```";
    const RIGHT: &str = "```python\n# stub: * -> SAT solution={}\n```";

    fn run_loop(script: Script, store: Option<&CorrectionStore>) -> (Result<CorrectionOutcome, CorrectionError>, u64) {
        let gw = LlmGateway::scripted(script, 8);
        let harness = SolverHarness::new(Arc::new(StubRunner), SolverLimits::default());
        let o = Ontology::default_ontology();
        let cases = cases();
        let p = profile(&["Sum"]);
        let input = CorrectionInput {
            problem_text: "p",
            problem_profile: &p,
            cases: &cases,
            language: "python",
            solved_rule: SolvedRule::All,
        };
        let initial = CandidateModel::new("# stub: * -> UNSAT", Provenance::default());
        let eval = harness.evaluate(&initial, &cases).unwrap();
        let deps = CorrectionDeps {
            store,
            ontology: &o,
            gateway: &gw,
            harness: &harness,
        };
        let r = correction_loop(
            &input,
            initial,
            eval,
            &CorrectionConfig::default(),
            &deps,
            CallContext::default(),
        );
        (r, gw.ledger().llm_calls())
    }

    #[test]
    fn wrong_then_right() {
        let store = CorrectionStore::from_exemplars(vec![corr("k", &["Sum"], vec![1.0; 8])]);
        let mut script = Script::default();
        script.push("correction", RIGHT);
        let (r, calls) = run_loop(script, Some(&store));
        let o = r.unwrap();
        assert!(o.solved);
        assert_eq!(o.rounds_used, 1);
        assert_eq!(calls, 1);
        assert_eq!(o.rounds[0].exemplar_id.as_deref(), Some("k"));
        assert_eq!(o.model.provenance.round, 1);
    }

    #[test]
    fn always_wrong_stops_after_budget() {
        let mut script = Script::default();
        for _ in 0..10 {
            script.push("correction", WRONG);
        }
        let (r, calls) = run_loop(script, None);
        let o = r.unwrap();
        assert!(!o.solved);
        assert_eq!(o.rounds_used, 4);
        assert_eq!(o.evaluations(), 5);
        assert_eq!(calls, 4);
        // best is the earliest among equal scores: the initial model
        assert_eq!(o.model.provenance.round, 0);
    }

    #[test]
    fn empty_response_consumes_round() {
        let mut script = Script::default();
        script.push("correction", "   ").push("correction", RIGHT);
        let (r, _) = run_loop(script, None);
        let o = r.unwrap();
        assert!(o.solved);
        assert_eq!(o.rounds_used, 2);
        assert!(o.rounds[0].error.is_some());
        assert_eq!(o.evaluations(), 2);
    }

    #[test]
    fn gateway_failure_aborts_with_trace() {
        let mut script = Script::default();
        script.push("correction", WRONG);
        let (r, _) = run_loop(script, None);
        let e = r.unwrap_err();
        assert!(matches!(e.cause, CorrectionCause::Gateway(_)));
        assert_eq!(e.rounds.len(), 2);
    }

    #[test]
    fn feedback_names_join_the_profile() {
        let gw = LlmGateway::scripted(Script::default(), 8);
        let harness = SolverHarness::new(Arc::new(StubRunner), SolverLimits::default());
        let m = CandidateModel::new("# stub: * -> RAISE error in AllDifferent over x", Provenance::default());
        let eval = harness.evaluate(&m, &cases()).unwrap();
        let c = build_error_context(
            &m.source,
            &eval,
            &profile(&["Sum"]),
            &Ontology::default_ontology(),
            &gw,
            CallContext::default(),
        )
        .unwrap();
        assert_eq!(c.inferred_profile, profile(&["Sum", "AllDifferent"]));
        assert!(c.feedback.starts_with("FAILED (0/2 passed)"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn full_shortlist_is_lexicographic_argmax(
                items in proptest::collection::vec((proptest::collection::vec(any::<bool>(), 5), 0u8..4), 1..12),
                q in proptest::collection::vec(any::<bool>(), 5),
            ) {
                let o = Ontology::default_ontology();
                let pick = |m: &[bool]| -> Vec<&str> {
                    o.entries().iter().zip(m).filter(|(_, b)| **b).map(|(t, _)| t.name()).collect()
                };
                let ex: Vec<_> = items
                    .iter()
                    .enumerate()
                    .map(|(i, (m, c))| corr(&format!("e{i}"), &pick(m), vec![1.0, *c as f32]))
                    .collect();
                let store = CorrectionStore::from_exemplars(ex.clone());
                let err = c_err(&pick(&q), vec![1.0, 0.0]);
                let cfg = CorrectionConfig { max_rounds: 4, shortlist_k: items.len() };
                let got = select_correction_exemplar(&err, &store, &cfg).unwrap().exemplar.id.clone();
                // oracle: maximize (jaccard, cosine), earliest on full ties
                let key = |e: &CorrectionExemplar| {
                    (jaccard_similarity(&err.inferred_profile, &e.profile),
                     cosine_or_zero(&err.embedding, e.error_embedding.as_ref().unwrap()))
                };
                let mut want = 0;
                for i in 1..ex.len() {
                    let (a, b) = (key(&ex[i]), key(&ex[want]));
                    if a.0 > b.0 || (a.0 == b.0 && a.1 > b.1) {
                        want = i;
                    }
                }
                prop_assert_eq!(got, ex[want].id.clone());
            }
        }
    }
}
