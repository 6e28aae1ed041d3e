//! Constraint-aware retrieval: profile extraction and Jaccard ranking.

use serde::{Deserialize, Serialize};

use crate::gateway::{template, CallContext, GatewayError, LlmGateway, Slots};
use crate::ontology::{parse_profile, ConstraintProfile, Ontology};
use crate::store::{rank_by_embedding, Exemplar, ExemplarStore, RankError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyProfileFallback {
    #[default]
    Rag,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub empty_profile_fallback: EmptyProfileFallback,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 4,
            empty_profile_fallback: EmptyProfileFallback::Rag,
        }
    }
}

/// |a ∩ b| / |a ∪ b|, with two empty profiles scoring 0.
pub fn jaccard_similarity(a: &ConstraintProfile, b: &ConstraintProfile) -> f64 {
    let union = a.union_len(b);
    if union == 0 {
        return 0.0;
    }
    a.intersection_len(b) as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedProfile {
    pub profile: ConstraintProfile,
    /// The analyzer's response, verbatim.
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Asks the analyzer for the problem's constraint profile. One gateway call.
pub fn extract_profile(
    problem_text: &str,
    gateway: &LlmGateway,
    ontology: &Ontology,
    ctx: CallContext<'_>,
) -> Result<ExtractedProfile, GatewayError> {
    let mut slots = Slots::new();
    slots.insert("problem", problem_text.to_string());
    slots.insert("ontology", ontology.catalog());
    let response = gateway.complete(template::ANALYZER, &slots, ctx)?;
    Ok(match parse_profile(&response.text, ontology) {
        Ok(parsed) => ExtractedProfile {
            profile: parsed.profile,
            raw: response.text,
            unknown: parsed.unknown,
            warning: None,
        },
        Err(e) => {
            log::warn!("{}: {e}; using an empty profile", ctx.problem_id);
            ExtractedProfile {
                profile: ConstraintProfile::new(),
                raw: response.text,
                unknown: Vec::new(),
                warning: Some(e.to_string()),
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalSource {
    Carm,
    RagFallback,
    Rag,
}

#[derive(Debug, Clone)]
pub struct Retrieval<'s> {
    pub hits: Vec<(&'s Exemplar, f64)>,
    pub source: RetrievalSource,
}

impl Retrieval<'_> {
    pub fn exemplars(&self) -> impl Iterator<Item = &Exemplar> {
        self.hits.iter().map(|(e, _)| *e)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum RetrievalError {
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("no constraint types detected and fallback is disabled")]
    EmptyProfile,
    #[error("exemplar `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl From<RankError> for RetrievalError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::EmptyStore => RetrievalError::EmptyStore,
            RankError::MissingEmbedding(id) => RetrievalError::MissingEmbedding(id),
        }
    }
}

/// Scores every exemplar by profile overlap and returns the best `k`.
/// Non-increasing in score; ties keep store order.
pub fn carm_rank<'s>(
    query: &ConstraintProfile,
    store: &'s ExemplarStore,
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<(&'s Exemplar, f64)>, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let mut scored: Vec<_> = store
        .exemplars()
        .iter()
        .filter(|e| exclude != Some(e.id.as_str()))
        .map(|e| (e, jaccard_similarity(query, &e.profile)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}

/// Generic embedding retrieval over description chunks.
pub fn rag_retrieve<'s>(
    query_text: &str,
    store: &'s ExemplarStore,
    k: usize,
    exclude: Option<&str>,
    gateway: &LlmGateway,
    ctx: CallContext<'_>,
) -> Result<Vec<(&'s Exemplar, f64)>, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let query = gateway.embed(query_text, ctx)?;
    Ok(rank_by_embedding(&query, store, k, exclude)?)
}

/// Profile-driven retrieval, falling back to embedding retrieval on the raw
/// description when the profile is empty and the config allows it.
#[allow(clippy::too_many_arguments)]
pub fn carm_retrieve<'s>(
    query_profile: &ConstraintProfile,
    description: &str,
    store: &'s ExemplarStore,
    cfg: &RetrievalConfig,
    exclude: Option<&str>,
    gateway: &LlmGateway,
    ctx: CallContext<'_>,
) -> Result<Retrieval<'s>, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    if query_profile.is_empty() {
        return match cfg.empty_profile_fallback {
            EmptyProfileFallback::Rag => Ok(Retrieval {
                hits: rag_retrieve(description, store, cfg.top_k, exclude, gateway, ctx)?,
                source: RetrievalSource::RagFallback,
            }),
            EmptyProfileFallback::Error => Err(RetrievalError::EmptyProfile),
        };
    }
    Ok(Retrieval {
        hits: carm_rank(query_profile, store, cfg.top_k, exclude)?,
        source: RetrievalSource::Carm,
    })
}

/// Few-shot block in the layout the modeling prompts expect.
pub fn format_examples<'a>(exemplars: impl IntoIterator<Item = &'a Exemplar>) -> String {
    let blocks: Vec<String> = exemplars
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            format!(
                "### Example {}\nProblem: {}\nCode: {}",
                i + 1,
                e.description.trim(),
                e.solution_code.trim()
            )
        })
        .collect();
    if blocks.is_empty() {
        "(none)".to_string()
    } else {
        blocks.join("\n\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Script;

    fn profile(names: &[&str]) -> ConstraintProfile {
        let (p, unknown) = ConstraintProfile::from_names(names, &Ontology::default_ontology());
        assert!(unknown.is_empty());
        p
    }

    fn exemplar(id: &str, names: &[&str]) -> Exemplar {
        Exemplar {
            id: id.into(),
            description: format!("problem {id}"),
            solution_code: format!("# code for {id}"),
            profile: profile(names),
            chunk_embeddings: vec![],
            category: None,
        }
    }

    #[test]
    fn jaccard_examples() {
        let tsp = profile(&["Circuit", "Sum", "Element", "Minimum"]);
        let tpp = profile(&["Circuit", "Element"]);
        assert_eq!(jaccard_similarity(&tsp, &tpp), 0.5);
        assert_eq!(jaccard_similarity(&tsp, &tsp), 1.0);
        assert_eq!(
            jaccard_similarity(&profile(&["AllDifferent"]), &profile(&["Cumulative"])),
            0.0
        );
        assert_eq!(
            jaccard_similarity(&ConstraintProfile::new(), &ConstraintProfile::new()),
            0.0
        );
    }

    #[test]
    fn tpp_ranks_first_for_tsp() {
        let store = ExemplarStore::from_exemplars(vec![
            exemplar("knapsack", &["Knapsack"]),
            exemplar("rcpsp", &["Cumulative", "Precedence"]),
            exemplar("tpp", &["Circuit", "Element"]),
            exemplar("nurses", &["AllDifferent", "Count"]),
        ]);
        let tsp = profile(&["Circuit", "Sum", "Element", "Minimum"]);
        let ranked = carm_rank(&tsp, &store, 4, None).unwrap();
        assert_eq!(ranked[0].0.id, "tpp");
        assert_eq!(ranked[0].1, 0.5);
        assert!(ranked[1..].iter().all(|(_, s)| *s == 0.0));
        // zero-score ties keep store order
        let rest: Vec<_> = ranked[1..].iter().map(|(e, _)| e.id.as_str()).collect();
        assert_eq!(rest, ["knapsack", "rcpsp", "nurses"]);
    }

    #[test]
    fn exact_profile_match_scores_one() {
        let store = ExemplarStore::from_exemplars(vec![
            exemplar("a", &["Knapsack"]),
            exemplar("b", &["NoOverlap", "Cumulative"]),
        ]);
        let ranked = carm_rank(&profile(&["Cumulative", "NoOverlap"]), &store, 4, None).unwrap();
        assert_eq!((ranked[0].0.id.as_str(), ranked[0].1), ("b", 1.0));
    }

    #[test]
    fn empty_store_and_exclusion() {
        let empty = ExemplarStore::default();
        assert!(matches!(
            carm_rank(&profile(&["Sum"]), &empty, 4, None),
            Err(RetrievalError::EmptyStore)
        ));
        let store = ExemplarStore::from_exemplars(vec![exemplar("a", &["Sum"]), exemplar("b", &["Sum"])]);
        let ranked = carm_rank(&profile(&["Sum"]), &store, 4, Some("a")).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0.id, "b");
    }

    #[test]
    fn extract_profile_from_scripted_analyzer() {
        let o = Ontology::default_ontology();
        let mut script = Script::default();
        script
            .push("analyzer", r#"["Circuit", "Sum", "Element", "Minimum"]"#)
            .push("analyzer", "[]")
            .push(
                "analyzer",
                "You will need AllDifferent … and NoOverlap for the machines.",
            )
            .push("analyzer", "[Bogus, Names");
        let gw = LlmGateway::scripted(script, 16);
        let ctx = CallContext::default();
        let p = extract_profile("tsp", &gw, &o, ctx).unwrap();
        assert_eq!(p.profile, profile(&["Circuit", "Sum", "Element", "Minimum"]));
        assert!(extract_profile("x", &gw, &o, ctx).unwrap().profile.is_empty());
        assert_eq!(
            extract_profile("x", &gw, &o, ctx).unwrap().profile,
            profile(&["AllDifferent", "NoOverlap"])
        );
        let degraded = extract_profile("x", &gw, &o, ctx).unwrap();
        assert!(degraded.profile.is_empty());
        assert!(degraded.warning.is_some());
        assert_eq!(gw.ledger().llm_calls(), 4);
    }

    #[test]
    fn empty_profile_falls_back_to_embeddings() {
        let gw = LlmGateway::scripted(Script::default(), 32);
        let embed = |t: &str| gw.embed(t, CallContext::default()).unwrap();
        let mut a = exemplar("a", &["Sum"]);
        a.description = "pack boxes into trucks".into();
        a.chunk_embeddings = vec![embed(&a.description)];
        let mut b = exemplar("b", &["Sum"]);
        b.description = "schedule nurses on shifts".into();
        b.chunk_embeddings = vec![embed(&b.description)];
        let store = ExemplarStore::from_exemplars(vec![a, b]);
        let cfg = RetrievalConfig::default();
        let r = carm_retrieve(
            &ConstraintProfile::new(),
            "schedule nurses on shifts",
            &store,
            &cfg,
            None,
            &gw,
            CallContext::default(),
        )
        .unwrap();
        assert_eq!(r.source, RetrievalSource::RagFallback);
        assert_eq!(r.hits[0].0.id, "b");

        let strict = RetrievalConfig {
            empty_profile_fallback: EmptyProfileFallback::Error,
            ..cfg
        };
        assert!(matches!(
            carm_retrieve(
                &ConstraintProfile::new(),
                "x",
                &store,
                &strict,
                None,
                &gw,
                CallContext::default()
            ),
            Err(RetrievalError::EmptyProfile)
        ));
    }

    #[test]
    fn examples_layout() {
        let a = exemplar("a", &["Sum"]);
        let b = exemplar("b", &["Sum"]);
        let text = format_examples([&a, &b]);
        assert!(text.starts_with("### Example 1\nProblem: problem a\nCode: # code for a"));
        assert!(text.contains("\n\n### Example 2\n"));
        assert_eq!(format_examples(std::iter::empty()), "(none)");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_profile() -> impl Strategy<Value = ConstraintProfile> {
            proptest::collection::vec(any::<bool>(), 17).prop_map(|mask| {
                let o = Ontology::default_ontology();
                o.entries()
                    .iter()
                    .zip(mask)
                    .filter(|(_, m)| *m)
                    .map(|(t, _)| t.clone())
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn jaccard_bounds_and_symmetry(a in arb_profile(), b in arb_profile()) {
                let s = jaccard_similarity(&a, &b);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, jaccard_similarity(&b, &a));
                if !a.is_empty() {
                    prop_assert_eq!(jaccard_similarity(&a, &a), 1.0);
                }
                prop_assert_eq!(s == 1.0, !a.is_empty() && a == b);
            }
        }
    }
}
