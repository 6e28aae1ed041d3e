//! Chat-completions and embeddings over HTTP.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{BackendError, BackendErrorKind, BackendReply, Embedder, GenerationRequest, TextBackend};
use crate::store::Embedding;

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post(agent: &Agent, ep: &HttpEndpoint, path: &str, body: &Value) -> Result<Value, BackendError> {
    let url = format!("{}/{}", ep.base_url.trim_end_matches('/'), path);
    let mut req = agent.post(&url).header("Content-Type", "application/json");
    if let Some(key) = &ep.api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => BackendError {
            kind: BackendErrorKind::Timeout,
            message: e.to_string(),
            transient: true,
        },
        other => BackendError {
            kind: BackendErrorKind::Transport,
            message: other.to_string(),
            transient: true,
        },
    })?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(BackendError {
            kind: BackendErrorKind::HttpStatus(status),
            message: text.chars().take(500).collect(),
            transient: status == 429 || status >= 500,
        });
    }
    resp.body_mut().read_json::<Value>().map_err(|e| BackendError {
        kind: BackendErrorKind::Malformed,
        message: e.to_string(),
        transient: false,
    })
}

fn malformed(msg: &str) -> BackendError {
    BackendError {
        kind: BackendErrorKind::Malformed,
        message: msg.to_string(),
        transient: false,
    }
}

pub struct HttpChatBackend {
    endpoint: HttpEndpoint,
    agent: Agent,
    id: String,
}

impl HttpChatBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        let id = format!("http:{}", endpoint.model);
        Self {
            agent: agent(endpoint.timeout),
            endpoint,
            id,
        }
    }
}

impl TextBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<BackendReply, BackendError> {
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        });
        if let Some(seed) = req.params.seed {
            body["seed"] = json!(seed);
        }
        let v = post(&self.agent, &self.endpoint, "chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| malformed("response has no choices[0].message.content"))?
            .to_string();
        Ok(BackendReply {
            text,
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64(),
            completion_tokens: v["usage"]["completion_tokens"].as_u64(),
        })
    }
}

pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    agent: Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self {
            agent: agent(endpoint.timeout),
            endpoint,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn model(&self) -> &str {
        &self.endpoint.model
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let body = json!({"model": self.endpoint.model, "input": text});
        let v = post(&self.agent, &self.endpoint, "embeddings", &body)?;
        let arr = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| malformed("response has no data[0].embedding"))?;
        arr.iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| malformed("non-numeric embedding"))
            })
            .collect()
    }
}
