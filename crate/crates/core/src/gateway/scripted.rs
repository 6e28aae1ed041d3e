//! Deterministic offline backend driven by a response script.
//!
//! A script holds named response queues and an optional prompt-hash table.
//! Lookup order for a request: the prompt hash, then the queue
//! `<problem_id>/<template_id>`, then `<template_id>`, then `*`. Queues are
//! consumed front to back; the hash table is not consumed.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendErrorKind, BackendReply, GenerationRequest, TextBackend};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub queues: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub by_prompt_hash: BTreeMap<String, String>,
    /// Simulated generation latency per completion token. Only wall time is
    /// affected; responses stay the same.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub ms_per_token: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn push(&mut self, queue: impl Into<String>, response: impl Into<String>) -> &mut Self {
        self.queues.entry(queue.into()).or_default().push(response.into());
        self
    }
}

/// SHA-256 of the rendered prompt, lowercase hex.
pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Whitespace word count, the token estimate used for scripted traffic.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    by_prompt_hash: BTreeMap<String, String>,
    ms_per_token: f64,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            id: "scripted".to_string(),
            queues: Mutex::new(
                script
                    .queues
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().collect()))
                    .collect(),
            ),
            by_prompt_hash: script.by_prompt_hash,
            ms_per_token: script.ms_per_token.max(0.0),
        }
    }

    /// Responses not yet consumed, across all queues.
    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .expect("script poisoned")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

impl TextBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<BackendReply, BackendError> {
        let text = if let Some(t) = self.by_prompt_hash.get(&prompt_hash(&req.prompt)) {
            t.clone()
        } else {
            let mut queues = self.queues.lock().expect("script poisoned");
            let keys = [
                format!("{}/{}", req.problem_id, req.template_id),
                req.template_id.clone(),
                "*".to_string(),
            ];
            keys.iter()
                .find_map(|k| queues.get_mut(k).and_then(VecDeque::pop_front))
                .ok_or_else(|| BackendError {
                    kind: BackendErrorKind::ScriptExhausted,
                    message: format!("no scripted response left for {}/{}", req.problem_id, req.template_id),
                    transient: false,
                })?
        };
        let completion_tokens = approx_tokens(&text);
        if self.ms_per_token > 0.0 {
            std::thread::sleep(std::time::Duration::from_secs_f64(
                self.ms_per_token * completion_tokens as f64 / 1e3,
            ));
        }
        Ok(BackendReply {
            prompt_tokens: Some(approx_tokens(&req.prompt)),
            completion_tokens: Some(completion_tokens),
            text,
        })
    }
}
