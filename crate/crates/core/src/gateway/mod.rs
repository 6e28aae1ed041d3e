//! Uniform access to generation and embedding backends.
//!
//! The gateway renders a template, dispatches to the backend that owns the
//! template's slot (analyzer or modeler), retries transient failures with
//! exponential backoff, bounds concurrent requests, and accounts every call
//! in the global ledger and, when given, a per-problem ledger.

pub mod codeblock;
pub mod embed;
pub mod http;
pub mod ledger;
pub mod scripted;
pub mod template;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use codeblock::{extract_code_block, EmptyResponse, ExtractedCode};
pub use embed::HashingEmbedder;
pub use ledger::{CallCounts, CallLedger, CallTimings};
pub use scripted::{prompt_hash, Script, ScriptedBackend};
pub use template::{PromptTemplate, Slots, TemplateError, TemplateSet};

use crate::store::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 3500,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub template_id: String,
    pub problem_id: String,
    pub prompt: String,
    pub params: GenParams,
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendErrorKind {
    Timeout,
    HttpStatus(u16),
    Transport,
    Malformed,
    ScriptExhausted,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub transient: bool,
}

pub trait TextBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<BackendReply, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn model(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend returned HTTP {status}: {message}")]
    HttpStatus { status: u16, message: String },
    #[error("gave up after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("embedding backend unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: f64,
    pub backend_id: String,
}

/// Per-call context: which problem the call belongs to, and where else to
/// account it.
#[derive(Clone, Copy, Default)]
pub struct CallContext<'a> {
    pub problem_id: &'a str,
    pub ledger: Option<&'a CallLedger>,
}

impl<'a> CallContext<'a> {
    pub fn new(problem_id: &'a str, ledger: &'a CallLedger) -> Self {
        Self {
            problem_id,
            ledger: Some(ledger),
        }
    }
}

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("limiter poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("limiter poisoned");
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LlmGateway {
    templates: TemplateSet,
    modeler: Arc<dyn TextBackend>,
    analyzer: Option<Arc<dyn TextBackend>>,
    embedder: Arc<dyn Embedder>,
    params: GenParams,
    retry: RetryPolicy,
    limiter: InFlight,
    ledger: CallLedger,
}

impl LlmGateway {
    pub fn new(templates: TemplateSet, modeler: Arc<dyn TextBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            templates,
            modeler,
            analyzer: None,
            embedder,
            params: GenParams::default(),
            retry: RetryPolicy::default(),
            limiter: InFlight::new(4),
            ledger: CallLedger::new(),
        }
    }

    /// Gateway over a scripted backend and a hashing embedder; no retry delay.
    pub fn scripted(script: Script, embed_dim: usize) -> Self {
        Self::new(
            TemplateSet::builtin(),
            Arc::new(ScriptedBackend::new(script)),
            Arc::new(HashingEmbedder::new(embed_dim)),
        )
        .with_retry(RetryPolicy {
            max_retries: 3,
            base_delay_ms: 0,
        })
    }

    pub fn with_analyzer(mut self, analyzer: Arc<dyn TextBackend>) -> Self {
        self.analyzer = Some(analyzer);
        self
    }

    pub fn with_params(mut self, params: GenParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.limiter = InFlight::new(limit);
        self
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn embedder_model(&self) -> &str {
        self.embedder.model()
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    fn backend_for(&self, template_id: &str) -> &Arc<dyn TextBackend> {
        match (&self.analyzer, template_id) {
            (Some(a), template::ANALYZER) => a,
            _ => &self.modeler,
        }
    }

    pub fn render(&self, template_id: &str, slots: &Slots) -> Result<String, TemplateError> {
        self.templates.render(template_id, slots)
    }

    pub fn complete(
        &self,
        template_id: &str,
        slots: &Slots,
        ctx: CallContext<'_>,
    ) -> Result<LlmResponse, GatewayError> {
        let prompt = self.render(template_id, slots)?;
        self.complete_prompt(template_id, prompt, ctx)
    }

    pub fn complete_prompt(
        &self,
        template_id: &str,
        prompt: String,
        ctx: CallContext<'_>,
    ) -> Result<LlmResponse, GatewayError> {
        let backend = self.backend_for(template_id);
        let req = GenerationRequest {
            template_id: template_id.to_string(),
            problem_id: ctx.problem_id.to_string(),
            prompt,
            params: self.params,
        };
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _slot = self.limiter.acquire();
                backend.generate(&req)
            };
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok(reply) => {
                    let prompt_tokens = reply
                        .prompt_tokens
                        .unwrap_or_else(|| scripted::approx_tokens(&req.prompt));
                    let completion_tokens = reply
                        .completion_tokens
                        .unwrap_or_else(|| scripted::approx_tokens(&reply.text));
                    for ledger in std::iter::once(&self.ledger).chain(ctx.ledger) {
                        ledger.record_completion(template_id, prompt_tokens, completion_tokens, wall_ms);
                    }
                    return Ok(LlmResponse {
                        text: reply.text,
                        prompt_tokens,
                        completion_tokens,
                        latency_ms: wall_ms,
                        backend_id: backend.id().to_string(),
                    });
                }
                Err(err) => {
                    for ledger in std::iter::once(&self.ledger).chain(ctx.ledger) {
                        ledger.record_failure();
                    }
                    if err.transient && attempt <= self.retry.max_retries {
                        log::warn!(
                            "{} call for {} failed ({}); retry {}",
                            template_id,
                            ctx.problem_id,
                            err.message,
                            attempt
                        );
                        std::thread::sleep(self.retry.delay(attempt - 1));
                        continue;
                    }
                    return Err(match err.kind {
                        BackendErrorKind::Timeout => GatewayError::Timeout { attempts: attempt },
                        BackendErrorKind::HttpStatus(status) if !err.transient => GatewayError::HttpStatus {
                            status,
                            message: err.message,
                        },
                        BackendErrorKind::Malformed => GatewayError::Malformed(err.message),
                        _ => GatewayError::RetriesExhausted {
                            attempts: attempt,
                            last: err.message,
                        },
                    });
                }
            }
        }
    }

    pub fn embed(&self, text: &str, ctx: CallContext<'_>) -> Result<Embedding, GatewayError> {
        let started = Instant::now();
        let result = {
            let _slot = self.limiter.acquire();
            self.embedder.embed(text)
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(v) => {
                for ledger in std::iter::once(&self.ledger).chain(ctx.ledger) {
                    ledger.record_embedding(wall_ms);
                }
                Ok(v)
            }
            Err(e) => Err(GatewayError::EmbedderUnavailable(e.message)),
        }
    }
}
