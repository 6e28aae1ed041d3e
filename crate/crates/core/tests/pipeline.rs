mod common;

use common::*;
use profilecp::carm::RetrievalSource;
use profilecp::gateway::Script;
use profilecp::pipeline::{Mode, Outcome, PipelineSettings};
use profilecp::tot::ExploreStatus;

const TSP_PROFILE: &str = "[\"Circuit\", \"Sum\", \"Element\", \"Minimum\"]";

fn script(entries: &[(&str, &str)]) -> Script {
    let mut s = Script::default();
    for (q, r) in entries {
        s.push(*q, *r);
    }
    s
}

#[test]
fn carm_right_first_time_takes_two_calls() {
    let s = script(&[("analyzer", TSP_PROFILE), ("carm_few_shot", &fenced(RIGHT))]);
    let p = scripted_pipeline(settings(Mode::Carm), s);
    let r = p.solve_problem(&problem("tsp", "routing", 3));
    assert_eq!(r.outcome, Outcome::Solved);
    assert_eq!(r.counters.llm_calls, 2);
    assert_eq!(r.rounds_used, 0);
    assert_eq!(r.final_score, 3);
    assert_eq!(r.retrieval_source, Some(RetrievalSource::Carm));
    // the fixture with the largest overlap leads
    assert_eq!(r.retrieved[0].id, "vrp");
    assert_eq!(r.retrieved[0].score, 0.75);
    assert_eq!(r.retrieved[1].id, "tpp");
    assert_eq!(r.retrieved[1].score, 0.5);
}

#[test]
fn cot_wrong_model_gets_one_generation() {
    let s = script(&[("cot_one_shot", &fenced(WRONG))]);
    let p = scripted_pipeline(settings(Mode::Cot), s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::Failed);
    assert_eq!(r.counters.modeling_generations, 1);
    assert_eq!(r.counters.llm_calls, 1);
    assert!(r.correction.is_empty());
    assert!(r.tree.is_none());
}

#[test]
fn rag_uses_embedding_order_and_no_correction() {
    let s = script(&[("rag_few_shot", &fenced(WRONG))]);
    let p = scripted_pipeline(settings(Mode::Rag), s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::Failed);
    assert_eq!(r.retrieval_source, Some(RetrievalSource::Rag));
    assert_eq!(r.retrieved.len(), 4);
    assert_eq!(r.counters.llm_calls, 1);
    assert!(r.correction.is_empty());
}

#[test]
fn carm_tot_all_wrong_visits_six_nodes_then_corrects() {
    let mut s = script(&[("analyzer", TSP_PROFILE)]);
    for _ in 0..6 {
        s.push("tot_expand", fenced(WRONG));
    }
    for _ in 0..4 {
        s.push("correction", fenced(WRONG));
    }
    let p = scripted_pipeline(settings(Mode::CarmTot), s);
    let r = p.solve_problem(&problem("tsp", "routing", 2));
    assert_eq!(r.outcome, Outcome::Failed);
    assert_eq!(r.counters.tot_nodes, 6);
    assert_eq!(r.explore_status, Some(ExploreStatus::AllBranchesFailed));
    assert_eq!(r.rounds_used, 4);
    assert_eq!(r.counters.evaluations, 6 + 4);
}

#[test]
fn empty_profile_falls_back_to_embeddings() {
    let s = script(&[("analyzer", "[]"), ("carm_few_shot", &fenced(RIGHT))]);
    let p = scripted_pipeline(settings(Mode::Carm), s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::Solved);
    assert_eq!(r.retrieval_source, Some(RetrievalSource::RagFallback));
    assert!(r.profile.unwrap().profile.is_empty());
}

#[test]
fn exhausted_script_is_an_infra_error() {
    let s = script(&[("analyzer", TSP_PROFILE)]);
    let p = scripted_pipeline(settings(Mode::Carm), s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::InfraError);
    assert!(r.error.is_some());
}

#[test]
fn crash_feedback_reaches_the_correction_prompt() {
    let s = script(&[
        ("analyzer", TSP_PROFILE),
        ("carm_few_shot", &fenced(CRASH)),
        ("correction", &fenced(RIGHT)),
    ]);
    let mut cfg = settings(Mode::Carm);
    cfg.correction.shortlist_k = 1;
    let p = scripted_pipeline(cfg, s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::Solved);
    assert_eq!(r.rounds_used, 1);
    let round = &r.correction[0];
    assert!(round.feedback.contains("IndexError"), "{}", round.feedback);
    assert_eq!(round.shortlist.len(), 1);
    assert_eq!(round.exemplar_id.as_deref(), Some(round.shortlist[0].id.as_str()));
}

#[test]
fn any_rule_accepts_partial_passes() {
    let s = script(&[("cot_one_shot", &fenced(&pattern_model(0b01, 2)))]);
    let settings = PipelineSettings {
        solved_rule: profilecp::harness::SolvedRule::Any,
        ..settings(Mode::Cot)
    };
    let p = scripted_pipeline(settings, s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    assert_eq!(r.outcome, Outcome::Solved);
    assert_eq!(r.final_score, 1);
}

#[test]
fn problem_without_cases_is_infra() {
    let p = scripted_pipeline(settings(Mode::Cot), Script::default());
    let r = p.solve_problem(&problem("p1", "misc", 0));
    assert_eq!(r.outcome, Outcome::InfraError);
    assert_eq!(r.counters.llm_calls, 0);
}

#[test]
fn report_round_trips_through_json() {
    let s = script(&[
        ("analyzer", TSP_PROFILE),
        ("carm_few_shot", &fenced(WRONG)),
        ("correction", &fenced(RIGHT)),
    ]);
    let p = scripted_pipeline(settings(Mode::Carm), s);
    let r = p.solve_problem(&problem("p1", "misc", 2));
    let text = serde_json::to_string(&r).unwrap();
    let back: profilecp::pipeline::ProblemReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn workers_keep_input_order() {
    let mut s = Script::default();
    let problems: Vec<_> = (0..6).map(|i| problem(&format!("p{i}"), "misc", 2)).collect();
    for (i, pr) in problems.iter().enumerate() {
        let code = if i % 2 == 0 { RIGHT } else { WRONG };
        s.push(format!("{}/cot_one_shot", pr.id), fenced(code));
    }
    let p = scripted_pipeline(settings(Mode::Cot), s);
    let reports = p.solve_all(&problems, 3);
    let ids: Vec<_> = reports.iter().map(|r| r.problem_id.as_str()).collect();
    assert_eq!(ids, ["p0", "p1", "p2", "p3", "p4", "p5"]);
    for (i, r) in reports.iter().enumerate() {
        let want = if i % 2 == 0 { Outcome::Solved } else { Outcome::Failed };
        assert_eq!(r.outcome, want);
    }
}
