use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::template::is_modeling_template;

/// Call counters. Deterministic for a scripted run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub llm_calls: u64,
    pub embed_calls: u64,
    pub failed_calls: u64,
    pub modeling_generations: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub max_completion_tokens: u64,
    pub calls_by_template: BTreeMap<String, u64>,
}

/// Measured durations, kept apart from the counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallTimings {
    pub wall_ms_per_call: Vec<f64>,
    pub embed_ms_per_call: Vec<f64>,
}

impl CallTimings {
    pub fn generation_ms(&self) -> f64 {
        self.wall_ms_per_call.iter().sum()
    }

    pub fn max_call_ms(&self) -> f64 {
        self.wall_ms_per_call.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Default)]
struct Inner {
    counts: CallCounts,
    timings: CallTimings,
}

/// Shared accounting of gateway traffic. Counters only ever grow.
#[derive(Debug, Default)]
pub struct CallLedger {
    inner: Mutex<Inner>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_completion(
        &self,
        template_id: &str,
        prompt_tokens: u64,
        completion_tokens: u64,
        wall_ms: f64,
    ) {
        let mut g = self.inner.lock().expect("ledger poisoned");
        let c = &mut g.counts;
        c.llm_calls += 1;
        if is_modeling_template(template_id) {
            c.modeling_generations += 1;
        }
        c.total_prompt_tokens += prompt_tokens;
        c.total_completion_tokens += completion_tokens;
        c.max_completion_tokens = c.max_completion_tokens.max(completion_tokens);
        *c.calls_by_template.entry(template_id.to_string()).or_default() += 1;
        g.timings.wall_ms_per_call.push(wall_ms);
    }

    pub(crate) fn record_failure(&self) {
        self.inner.lock().expect("ledger poisoned").counts.failed_calls += 1;
    }

    pub(crate) fn record_embedding(&self, wall_ms: f64) {
        let mut g = self.inner.lock().expect("ledger poisoned");
        g.counts.embed_calls += 1;
        g.timings.embed_ms_per_call.push(wall_ms);
    }

    pub fn counts(&self) -> CallCounts {
        self.inner.lock().expect("ledger poisoned").counts.clone()
    }

    pub fn timings(&self) -> CallTimings {
        self.inner.lock().expect("ledger poisoned").timings.clone()
    }

    pub fn llm_calls(&self) -> u64 {
        self.inner.lock().expect("ledger poisoned").counts.llm_calls
    }
}
