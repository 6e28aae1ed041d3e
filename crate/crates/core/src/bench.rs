//! Dataset-level evaluation: solving accuracy, per-category breakdown, cost
//! accounting and the wall-time upper bound.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::correction::CorrectionConfig;
use crate::pipeline::{Mode, Outcome, ProblemCounters, ProblemReport};
use crate::tot::{predicted_node_count, ToTConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no problem reports to aggregate")]
pub struct EmptyRun;

/// Percentage of reports that are SOLVED. Infrastructure failures count
/// against the total.
pub fn solving_accuracy(reports: &[ProblemReport]) -> Result<f64, EmptyRun> {
    if reports.is_empty() {
        return Err(EmptyRun);
    }
    let solved = reports.iter().filter(|r| r.outcome == Outcome::Solved).count();
    Ok(percent(solved, reports.len()))
}

fn percent(part: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub solved: usize,
    pub total: usize,
    pub sa_percent: f64,
}

/// One row per category, largest first, then by name.
pub fn category_breakdown(reports: &[ProblemReport]) -> Vec<CategoryRow> {
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in reports {
        let g = groups.entry(r.category.as_str()).or_default();
        g.1 += 1;
        if r.outcome == Outcome::Solved {
            g.0 += 1;
        }
    }
    let mut rows: Vec<CategoryRow> = groups
        .into_iter()
        .map(|(category, (solved, total))| CategoryRow {
            category: category.to_string(),
            solved,
            total,
            sa_percent: percent(solved, total),
        })
        .collect();
    rows.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.category.cmp(&b.category)));
    rows
}

/// Per-problem quantities the bound is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStats {
    /// L_gen: generated tokens of the longest completion.
    pub l_gen_tokens: f64,
    /// f: seconds per generated token.
    pub f_token_s: f64,
    /// T_solver: seconds for the longest evaluation.
    pub t_solver_s: f64,
    /// T_CARM: seconds for the longest retrieval event.
    pub t_carm_s: f64,
}

/// Generation attempts per chain: the correction rounds plus the first try.
pub fn generation_attempts(correction: Option<&CorrectionConfig>) -> u64 {
    correction.map_or(0, |c| c.max_rounds as u64) + 1
}

/// k·L_gen·f + k·T_solver + k·T_CARM, times the node count when a tree
/// search is involved.
pub fn cost_upper_bound(k: u64, tot: Option<&ToTConfig>, stats: &CostStats) -> Duration {
    let k = k as f64;
    let per_chain = k * stats.l_gen_tokens * stats.f_token_s + k * stats.t_solver_s + k * stats.t_carm_s;
    let nodes = tot.map_or(1, predicted_node_count) as f64;
    Duration::from_secs_f64((per_chain * nodes).max(0.0))
}

/// `cost_upper_bound` with k and the tree taken from a mode's settings.
pub fn mode_upper_bound(mode: Mode, correction: &CorrectionConfig, tot: &ToTConfig, stats: &CostStats) -> Duration {
    let k = generation_attempts(mode.uses_correction().then_some(correction));
    cost_upper_bound(k, mode.uses_tot().then_some(tot), stats)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AvgMax {
    pub avg: f64,
    pub max: f64,
}

impl AvgMax {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        Self {
            avg: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Call counters per problem. Deterministic for a scripted run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub llm_calls: AvgMax,
    pub modeling_generations: AvgMax,
    pub solver_calls: AvgMax,
    pub evaluations: AvgMax,
    pub carm_retrievals: AvgMax,
    pub correction_rounds: AvgMax,
    pub tot_nodes: AvgMax,
}

impl CostReport {
    pub fn from_reports(reports: &[ProblemReport]) -> Self {
        let of = |f: fn(&ProblemCounters) -> f64| AvgMax::of(reports.iter().map(|r| f(&r.counters)));
        Self {
            llm_calls: of(|c| c.llm_calls as f64),
            modeling_generations: of(|c| c.modeling_generations as f64),
            solver_calls: of(|c| c.solver_calls as f64),
            evaluations: of(|c| c.evaluations as f64),
            carm_retrievals: of(|c| c.carm_retrievals as f64),
            correction_rounds: of(|c| c.correction_rounds as f64),
            tot_nodes: of(|c| c.tot_nodes as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemBound {
    pub problem_id: String,
    pub observed_s: f64,
    pub bound_s: f64,
    pub stats: CostStats,
    pub within_bound: bool,
}

/// Measured durations of the run. Excluded from determinism checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    /// Run-level generation speed in seconds per completion token.
    pub f_token_s: f64,
    pub wall_ms: AvgMax,
    pub generation_call_ms: AvgMax,
    pub eval_ms: AvgMax,
    pub carm_ms: AvgMax,
    pub bounds: Vec<ProblemBound>,
    pub all_within_bound: bool,
}

impl RunTiming {
    pub fn from_reports(reports: &[ProblemReport], correction: &CorrectionConfig, tot: &ToTConfig) -> Self {
        let tokens: u64 = reports.iter().map(|r| r.calls.total_completion_tokens).sum();
        let gen_ms: f64 = reports.iter().map(|r| r.timing.generation_ms).sum();
        let f_token_s = if tokens == 0 { 0.0 } else { gen_ms / 1e3 / tokens as f64 };
        let calls: u64 = reports.iter().map(|r| r.calls.llm_calls).sum();
        let bounds: Vec<ProblemBound> = reports
            .iter()
            .filter(|r| r.outcome != Outcome::InfraError)
            .map(|r| {
                let stats = CostStats {
                    l_gen_tokens: r.counters.max_completion_tokens as f64,
                    f_token_s,
                    t_solver_s: r.timing.max_eval_ms / 1e3,
                    t_carm_s: r.timing.max_carm_ms / 1e3,
                };
                let bound_s = mode_upper_bound(r.mode, correction, tot, &stats).as_secs_f64();
                let observed_s = r.timing.wall_ms / 1e3;
                ProblemBound {
                    problem_id: r.problem_id.clone(),
                    observed_s,
                    bound_s,
                    stats,
                    within_bound: observed_s <= bound_s,
                }
            })
            .collect();
        Self {
            f_token_s,
            wall_ms: AvgMax::of(reports.iter().map(|r| r.timing.wall_ms)),
            generation_call_ms: AvgMax {
                avg: if calls == 0 { 0.0 } else { gen_ms / calls as f64 },
                max: reports.iter().map(|r| r.timing.max_call_ms).fold(0.0, f64::max),
            },
            eval_ms: AvgMax::of(reports.iter().map(|r| r.timing.max_eval_ms)),
            carm_ms: AvgMax::of(reports.iter().map(|r| r.timing.max_carm_ms)),
            all_within_bound: bounds.iter().all(|b| b.within_bound),
            bounds,
        }
    }
}

/// Deterministic per-problem line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub problem_id: String,
    pub category: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unverifiable: bool,
    pub score: usize,
    pub n_cases: usize,
    pub rounds_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<String>,
    pub counters: ProblemCounters,
}

impl From<&ProblemReport> for ProblemSummary {
    fn from(r: &ProblemReport) -> Self {
        Self {
            problem_id: r.problem_id.clone(),
            category: r.category.clone(),
            outcome: r.outcome,
            error: r.error.clone(),
            unverifiable: r.unverifiable,
            score: r.final_score,
            n_cases: r.n_cases,
            rounds_used: r.rounds_used,
            profile: r.profile.as_ref().map(|p| p.profile.names()),
            retrieved: r.retrieved.iter().map(|e| e.id.clone()).collect(),
            counters: r.counters.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub solved: usize,
    pub failed: usize,
    pub infra_errors: usize,
    pub sa_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

impl Timestamps {
    pub fn now_unix_s() -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub run_id: String,
    pub dataset: String,
    pub mode: Mode,
    pub summary: RunSummary,
    pub categories: Vec<CategoryRow>,
    pub cost: CostReport,
    pub problems: Vec<ProblemSummary>,
    #[serde(default)]
    pub config: Value,
    pub timing: RunTiming,
    pub timestamps: Timestamps,
}

impl BenchReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        run_id: &str,
        dataset: &str,
        mode: Mode,
        reports: &[ProblemReport],
        correction: &CorrectionConfig,
        tot: &ToTConfig,
        config: Value,
        timestamps: Timestamps,
    ) -> Result<Self, EmptyRun> {
        let sa_percent = solving_accuracy(reports)?;
        let count = |o| reports.iter().filter(|r| r.outcome == o).count();
        let infra_errors = count(Outcome::InfraError);
        if infra_errors > 0 {
            log::warn!("{infra_errors} problem(s) ended in INFRA_ERROR and count as unsolved");
        }
        Ok(Self {
            run_id: run_id.to_string(),
            dataset: dataset.to_string(),
            mode,
            summary: RunSummary {
                total: reports.len(),
                solved: count(Outcome::Solved),
                failed: count(Outcome::Failed),
                infra_errors,
                sa_percent,
            },
            categories: category_breakdown(reports),
            cost: CostReport::from_reports(reports),
            problems: reports.iter().map(ProblemSummary::from).collect(),
            config,
            timing: RunTiming::from_reports(reports, correction, tot),
            timestamps,
        })
    }

    /// Fixed-width text rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let s = &self.summary;
        let _ = writeln!(out, "run {}  dataset {}  mode {}", self.run_id, self.dataset, self.mode);
        let _ = writeln!(
            out,
            "SA {:.1}%  ({} solved / {} total, {} failed, {} infra errors)",
            s.sa_percent, s.solved, s.total, s.failed, s.infra_errors
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<32} {:>7} {:>7} {:>7}", "category", "solved", "total", "SA%");
        for row in &self.categories {
            let _ = writeln!(
                out,
                "{:<32} {:>7} {:>7} {:>7.1}",
                truncate(&row.category, 32),
                row.solved,
                row.total,
                row.sa_percent
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:>9} {:>9}", "per problem", "avg", "max");
        let c = &self.cost;
        for (name, v) in [
            ("llm calls", &c.llm_calls),
            ("modeling generations", &c.modeling_generations),
            ("evaluations", &c.evaluations),
            ("solver calls", &c.solver_calls),
            ("retrievals", &c.carm_retrievals),
            ("correction rounds", &c.correction_rounds),
            ("tree nodes", &c.tot_nodes),
        ] {
            let _ = writeln!(out, "{:<24} {:>9.2} {:>9.0}", name, v.avg, v.max);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<32} {:<12} {:>6} {:>7}",
            "problem", "outcome", "score", "rounds"
        );
        for p in &self.problems {
            let _ = writeln!(
                out,
                "{:<32} {:<12} {:>6} {:>7}",
                truncate(&p.problem_id, 32),
                p.outcome.to_string(),
                format!("{}/{}", p.score, p.n_cases),
                p.rounds_used
            );
        }
        out
    }
}

fn truncate(s: &str, width: usize) -> String {
    if s.chars().count() <= width {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(width - 1).collect();
        t.push('~');
        t
    }
}

/// Problem ids as file names.
pub fn problem_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    let safe = safe.trim_start_matches('.');
    format!("{}.json", if safe.is_empty() { "_" } else { safe })
}

/// Writes `report.json`, `report.txt` and `problems/<id>.json` under `dir`.
pub fn write_run(dir: &Path, report: &BenchReport, problems: &[ProblemReport]) -> std::io::Result<PathBuf> {
    let problems_dir = dir.join("problems");
    std::fs::create_dir_all(&problems_dir)?;
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("report.txt"), report.render_text())?;
    for p in problems {
        let json = serde_json::to_string_pretty(p).map_err(std::io::Error::other)?;
        std::fs::write(problems_dir.join(problem_file_name(&p.problem_id)), json + "\n")?;
    }
    Ok(dir.join("report.json"))
}

/// A report document with the run-dependent fields removed.
pub fn strip_nondeterministic(mut report: Value) -> Value {
    if let Value::Object(map) = &mut report {
        map.remove("timing");
        map.remove("timestamps");
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ProblemStatement;

    fn report(id: &str, category: &str, outcome: Outcome) -> ProblemReport {
        let p = ProblemStatement {
            id: id.into(),
            category: category.into(),
            description: String::new(),
            input_format: String::new(),
            test_cases: vec![],
        };
        let mut r = serde_json::from_value::<ProblemReport>(serde_json::json!({
            "problem_id": p.id, "category": p.category, "mode": "carm", "outcome": "FAILED",
            "n_cases": 0, "final_score": 0, "rounds_used": 0,
            "counters": ProblemCounters::default(), "calls": {
                "llm_calls": 0, "embed_calls": 0, "failed_calls": 0, "modeling_generations": 0,
                "total_prompt_tokens": 0, "total_completion_tokens": 0, "max_completion_tokens": 0,
                "calls_by_template": {}
            },
            "timing": {"wall_ms": 0.0, "generation_ms": 0.0, "max_call_ms": 0.0, "max_eval_ms": 0.0, "max_carm_ms": 0.0}
        }))
        .unwrap();
        r.outcome = outcome;
        r
    }

    #[test]
    fn sa_ratios() {
        use Outcome::*;
        let rs = [Solved, Failed, Solved, InfraError].map(|o| report("x", "c", o));
        assert_eq!(solving_accuracy(&rs), Ok(50.0));
        let none: Vec<_> = (0..10).map(|_| report("x", "c", Failed)).collect();
        assert_eq!(solving_accuracy(&none), Ok(0.0));
        let mut many: Vec<_> = (0..140).map(|_| report("x", "c", Failed)).collect();
        for r in many.iter_mut().take(56) {
            r.outcome = Solved;
        }
        assert_eq!(solving_accuracy(&many), Ok(40.0));
        assert_eq!(solving_accuracy(&[]), Err(EmptyRun));
    }

    #[test]
    fn categories() {
        use Outcome::*;
        let rs = vec![
            report("a", "Scheduling", Solved),
            report("b", "Scheduling", Solved),
            report("c", "Scheduling", Solved),
            report("d", "Scheduling", Failed),
            report("e", "Routing", Failed),
        ];
        let rows = category_breakdown(&rs);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].category.as_str(), rows[0].sa_percent), ("Scheduling", 75.0));
        assert_eq!((rows[1].category.as_str(), rows[1].sa_percent), ("Routing", 0.0));
        assert_eq!(solving_accuracy(&rs), Ok(60.0));
        let one = category_breakdown(&[report("a", "X", Solved)]);
        assert_eq!(one[0].sa_percent, 100.0);
    }

    #[test]
    fn bound_examples() {
        let stats = CostStats {
            l_gen_tokens: 1000.0,
            f_token_s: 0.03,
            t_solver_s: 20.0,
            t_carm_s: 0.0,
        };
        let b = cost_upper_bound(5, None, &stats).as_secs_f64();
        assert!((b - 250.0).abs() < 1e-9);
        let t = cost_upper_bound(5, Some(&ToTConfig::default()), &stats).as_secs_f64();
        assert!((t - 1500.0).abs() < 1e-9);
        let single = cost_upper_bound(1, None, &stats).as_secs_f64();
        assert!((single - (1000.0 * 0.03 + 20.0)).abs() < 1e-9);
        assert_eq!(generation_attempts(Some(&CorrectionConfig::default())), 5);
        assert_eq!(generation_attempts(None), 1);
    }

    #[test]
    fn file_names_are_safe() {
        assert_eq!(problem_file_name("p-01"), "p-01.json");
        assert_eq!(problem_file_name("../etc/x"), "_etc_x.json");
        assert_eq!(problem_file_name("a b/c"), "a_b_c.json");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sa_permutation_invariant_and_rows_sum(
                rows in proptest::collection::vec((0u8..11, any::<bool>()), 1..60),
                seed in any::<u64>(),
            ) {
                let rs: Vec<_> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, (c, s))| report(&i.to_string(), &format!("cat{c}"), if *s { Outcome::Solved } else { Outcome::Failed }))
                    .collect();
                let mut shuffled = rs.clone();
                use rand::{seq::SliceRandom, SeedableRng};
                shuffled.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
                prop_assert_eq!(solving_accuracy(&rs), solving_accuracy(&shuffled));
                let rows = category_breakdown(&rs);
                prop_assert_eq!(rows.iter().map(|r| r.solved).sum::<usize>(), rs.iter().filter(|r| r.outcome == Outcome::Solved).count());
                prop_assert_eq!(rows.iter().map(|r| r.total).sum::<usize>(), rs.len());
                // brute-force group-by
                for row in &rows {
                    let members: Vec<_> = rs.iter().filter(|r| r.category == row.category).collect();
                    prop_assert_eq!(members.len(), row.total);
                    prop_assert_eq!(members.iter().filter(|r| r.outcome == Outcome::Solved).count(), row.solved);
                }
                prop_assert!(rows.windows(2).all(|w| w[0].total > w[1].total || (w[0].total == w[1].total && w[0].category < w[1].category)));
            }
        }
    }
}
