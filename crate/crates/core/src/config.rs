//! Run configuration: one JSON file, resolved and validated before any
//! backend, store or subprocess is touched.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::carm::RetrievalConfig;
use crate::correction::CorrectionConfig;
use crate::gateway::http::{HttpChatBackend, HttpEmbedder, HttpEndpoint};
use crate::gateway::{
    Embedder, GenParams, HashingEmbedder, LlmGateway, RetryPolicy, Script, ScriptedBackend, TemplateSet, TextBackend,
};
use crate::harness::{CommandSpec, Runner, SolvedRule, SolverHarness, SolverLimits, SubprocessRunner};
use crate::ontology::Ontology;
use crate::pipeline::{Mode, Pipeline, PipelineSettings};
use crate::store::{CorrectionStore, ExemplarStore};
use crate::stub::StubRunner;
use crate::tot::ToTConfig;

/// `runner_cmd` value selecting the built-in stub runner.
pub const STUB_RUNNER: &str = "@stub";

pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-ada-002";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub knowledge_base: Option<PathBuf>,
    pub correction_db: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub runner_cmd: Option<CommandSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Response script for the scripted backend.
    pub script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            script: None,
            base_url: None,
            model: None,
            api_key_env: None,
            timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    /// Dimension of the hashing embedder.
    pub dim: usize,
    pub model: String,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hashing,
            dim: 256,
            model: DEFAULT_EMBEDDING_MODEL.to_string(),
            base_url: None,
            api_key_env: None,
            timeout_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub mode: Mode,
    pub retrieval: RetrievalConfig,
    pub correction: CorrectionConfig,
    pub tot: ToTConfig,
    pub generation: BackendConfig,
    /// Separate backend for profile extraction; defaults to `generation`.
    pub analyzer: Option<BackendConfig>,
    pub params: GenParams,
    pub embedding: EmbeddingConfig,
    pub retry: RetryPolicy,
    pub solver: SolverLimits,
    pub max_in_flight: usize,
    pub max_parallel_solvers: usize,
    pub workers: usize,
    pub solved_rule: SolvedRule,
    pub language: String,
    /// Keep a problem out of its own few-shot examples.
    pub exclude_self: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            mode: Mode::Carm,
            retrieval: RetrievalConfig::default(),
            correction: CorrectionConfig::default(),
            tot: ToTConfig::default(),
            generation: BackendConfig::default(),
            analyzer: None,
            params: GenParams::default(),
            embedding: EmbeddingConfig::default(),
            retry: RetryPolicy::default(),
            solver: SolverLimits::default(),
            max_in_flight: 4,
            max_parallel_solvers: 1,
            workers: 1,
            solved_rule: SolvedRule::All,
            language: "python".to_string(),
            exclude_self: true,
        }
    }
}

/// Turns a serde error about an unknown or mistyped field into a keyed error.
fn parse_error(e: serde_json::Error) -> ConfigError {
    let msg = e.to_string();
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
        .unwrap_or("<root>")
        .to_string();
    ConfigError::new(key, msg)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(parse_error)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.dataset,
            &mut p.knowledge_base,
            &mut p.correction_db,
            &mut p.ontology,
            &mut p.prompts_dir,
            &mut p.output_dir,
            &mut self.generation.script,
        ] {
            resolve(base, slot);
        }
        if let Some(a) = &mut self.analyzer {
            resolve(base, &mut a.script);
        }
        // a runner given as a relative path to an executable next to the config
        if let Some(cmd) = &mut p.runner_cmd {
            let mut argv = cmd.argv();
            if let Some(first) = argv.first_mut() {
                if first.starts_with("./") || first.starts_with("../") {
                    *first = base.join(&*first).display().to_string();
                    *cmd = CommandSpec::Argv(argv);
                }
            }
        }
    }

    /// Checks everything that can be checked without touching a backend.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |k: &str, m: &str| Err(ConfigError::new(k, m));
        if self.retrieval.top_k == 0 {
            return err("retrieval.top_k", "must be at least 1");
        }
        if self.correction.max_rounds == 0 {
            return err("correction.max_rounds", "must be at least 1");
        }
        if self.correction.shortlist_k == 0 {
            return err("correction.shortlist_k", "must be at least 1");
        }
        if let Err(m) = self.tot.validate() {
            let key = m.split_whitespace().next().unwrap_or("tot").to_string();
            return Err(ConfigError::new(key, m));
        }
        if self.solver.time_limit_s.is_nan() || self.solver.time_limit_s <= 0.0 {
            return err("solver.time_limit_s", "must be positive");
        }
        if self.workers == 0 {
            return err("workers", "must be at least 1");
        }
        if self.max_parallel_solvers == 0 {
            return err("max_parallel_solvers", "must be at least 1");
        }
        if self.max_in_flight == 0 {
            return err("max_in_flight", "must be at least 1");
        }
        if self.language.trim().is_empty() {
            return err("language", "must not be empty");
        }
        if self.mode != Mode::Direct {
            match &self.paths.runner_cmd {
                None => return err("paths.runner_cmd", &format!("required in {} mode", self.mode)),
                Some(c) if c.argv().is_empty() => return err("paths.runner_cmd", "is empty"),
                _ => {}
            }
        }
        if self.mode.needs_knowledge_base() && self.paths.knowledge_base.is_none() {
            return err("paths.knowledge_base", &format!("required in {} mode", self.mode));
        }
        check_backend("generation", &self.generation)?;
        if let Some(a) = &self.analyzer {
            check_backend("analyzer", a)?;
        }
        match self.embedding.kind {
            EmbeddingKind::Hashing if self.embedding.dim == 0 => return err("embedding.dim", "must be at least 1"),
            EmbeddingKind::Http if self.embedding.base_url.is_none() => {
                return err("embedding.base_url", "required for http embeddings")
            }
            _ => {}
        }
        Ok(())
    }

    /// The frozen copy embedded into reports. API keys never appear here;
    /// only the names of the variables holding them.
    pub fn frozen(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            mode: Some(self.mode),
            retrieval: self.retrieval,
            correction: self.correction,
            tot: self.tot,
            solved_rule: self.solved_rule,
            language: Some(self.language.clone()),
        }
    }

    pub fn load_ontology(&self) -> Result<Ontology, ConfigError> {
        match &self.paths.ontology {
            None => Ok(Ontology::default_ontology()),
            Some(p) => Ontology::load(p).map_err(|e| ConfigError::new("paths.ontology", e.to_string())),
        }
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.paths.prompts_dir {
            None => Ok(TemplateSet::builtin()),
            Some(d) => TemplateSet::load_dir(d).map_err(|e| ConfigError::new("paths.prompts_dir", e.to_string())),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let e = &self.embedding;
        Ok(match e.kind {
            EmbeddingKind::Hashing => Arc::new(HashingEmbedder::new(e.dim)),
            EmbeddingKind::Http => Arc::new(HttpEmbedder::new(HttpEndpoint {
                base_url: e.base_url.clone().unwrap_or_default(),
                model: e.model.clone(),
                api_key: api_key("embedding.api_key_env", e.api_key_env.as_deref())?,
                timeout: Duration::from_secs_f64(e.timeout_s.max(1.0)),
            })),
        })
    }

    /// Builds the gateway. Scripted backends get no retry delay.
    pub fn gateway(&self) -> Result<LlmGateway, ConfigError> {
        let modeler = backend("generation", &self.generation)?;
        let mut gw = LlmGateway::new(self.templates()?, modeler, self.embedder()?)
            .with_params(self.params)
            .with_max_in_flight(self.max_in_flight);
        gw = gw.with_retry(match self.generation.kind {
            BackendKind::Scripted => RetryPolicy {
                base_delay_ms: 0,
                ..self.retry
            },
            BackendKind::Http => self.retry,
        });
        if let Some(a) = &self.analyzer {
            gw = gw.with_analyzer(backend("analyzer", a)?);
        }
        Ok(gw)
    }

    pub fn runner(&self) -> Arc<dyn Runner> {
        match &self.paths.runner_cmd {
            Some(CommandSpec::Line(s)) if s.trim() == STUB_RUNNER => Arc::new(StubRunner),
            Some(cmd) => Arc::new(SubprocessRunner::new(cmd.argv()).with_memory_mb(self.solver.memory_mb)),
            // direct mode runs no models
            None => Arc::new(StubRunner),
        }
    }

    pub fn harness(&self) -> SolverHarness {
        SolverHarness::new(self.runner(), self.solver).with_max_parallel(self.max_parallel_solvers)
    }

    /// Loads stores and wires the pipeline.
    pub fn pipeline(&self) -> Result<Pipeline, ConfigError> {
        let ontology = self.load_ontology()?;
        let gateway = Arc::new(self.gateway()?);
        let mut pipeline = Pipeline::new(gateway, self.harness(), ontology, self.settings());
        pipeline.exclude_self = self.exclude_self;
        if let Some(kb) = &self.paths.knowledge_base {
            if self.mode.needs_knowledge_base() {
                let store = ExemplarStore::load(kb, &pipeline.ontology)
                    .map_err(|e| ConfigError::new("paths.knowledge_base", e.to_string()))?;
                pipeline = pipeline.with_knowledge_base(store);
            }
        }
        if let Some(db) = &self.paths.correction_db {
            if self.mode.uses_correction() {
                let store = CorrectionStore::load(db, &pipeline.ontology)
                    .map_err(|e| ConfigError::new("paths.correction_db", e.to_string()))?;
                pipeline = pipeline.with_correction_db(store);
            }
        }
        Ok(pipeline)
    }
}

fn check_backend(key: &str, b: &BackendConfig) -> Result<(), ConfigError> {
    match b.kind {
        BackendKind::Scripted if b.script.is_none() => Err(ConfigError::new(
            format!("{key}.script"),
            "required for the scripted backend",
        )),
        BackendKind::Http if b.base_url.is_none() => {
            Err(ConfigError::new(format!("{key}.base_url"), "required for http"))
        }
        BackendKind::Http if b.model.is_none() => Err(ConfigError::new(format!("{key}.model"), "required for http")),
        _ if b.timeout_s.is_nan() || b.timeout_s <= 0.0 => {
            Err(ConfigError::new(format!("{key}.timeout_s"), "must be positive"))
        }
        _ => Ok(()),
    }
}

fn api_key(key: &str, var: Option<&str>) -> Result<Option<String>, ConfigError> {
    match var {
        None => Ok(None),
        Some(v) => std::env::var(v)
            .map(Some)
            .map_err(|_| ConfigError::new(key, format!("environment variable `{v}` is not set"))),
    }
}

fn backend(key: &str, b: &BackendConfig) -> Result<Arc<dyn TextBackend>, ConfigError> {
    Ok(match b.kind {
        BackendKind::Scripted => {
            let path = b
                .script
                .as_deref()
                .ok_or_else(|| ConfigError::new(format!("{key}.script"), "missing"))?;
            let script = Script::load(path).map_err(|e| ConfigError::new(format!("{key}.script"), e))?;
            Arc::new(ScriptedBackend::new(script))
        }
        BackendKind::Http => Arc::new(HttpChatBackend::new(HttpEndpoint {
            base_url: b.base_url.clone().unwrap_or_default(),
            model: b.model.clone().unwrap_or_default(),
            api_key: api_key(&format!("{key}.api_key_env"), b.api_key_env.as_deref())?,
            timeout: Duration::from_secs_f64(b.timeout_s),
        })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{"paths": {"runner_cmd": "@stub", "knowledge_base": "kb.jsonl"},
                "generation": {"kind": "scripted", "script": "s.json"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_validate() {
        let cfg = base();
        assert_eq!(cfg.mode, Mode::Carm);
        assert_eq!(cfg.correction.max_rounds, 4);
        assert_eq!(cfg.solver.time_limit_s, 20.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_json(r#"{"mdoe": "cot"}"#).unwrap_err();
        assert_eq!(e.key, "mdoe");
    }

    #[test]
    fn missing_runner_is_named() {
        let mut cfg = base();
        cfg.paths.runner_cmd = None;
        assert_eq!(cfg.validate().unwrap_err().key, "paths.runner_cmd");
        cfg.mode = Mode::Direct;
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_are_named() {
        let mut cfg = base();
        cfg.tot.beam = 0;
        assert_eq!(cfg.validate().unwrap_err().key, "tot.beam");
        let mut cfg = base();
        cfg.retrieval.top_k = 0;
        assert_eq!(cfg.validate().unwrap_err().key, "retrieval.top_k");
        let mut cfg = base();
        cfg.paths.knowledge_base = None;
        assert_eq!(cfg.validate().unwrap_err().key, "paths.knowledge_base");
        cfg.mode = Mode::Cot;
        cfg.validate().unwrap();
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = base();
        cfg.paths.runner_cmd = Some(CommandSpec::Line("./runner --fast".into()));
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.paths.knowledge_base, Some(PathBuf::from("/cfg/kb.jsonl")));
        assert_eq!(cfg.generation.script, Some(PathBuf::from("/cfg/s.json")));
        assert_eq!(cfg.paths.runner_cmd.unwrap().argv(), ["/cfg/./runner", "--fast"]);
    }
}
