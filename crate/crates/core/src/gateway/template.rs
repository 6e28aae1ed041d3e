//! Prompt templates: plain-text bodies with `{slot}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

pub const ANALYZER: &str = "analyzer";
pub const DIRECT: &str = "direct";
pub const COT_ONE_SHOT: &str = "cot_one_shot";
pub const RAG_FEW_SHOT: &str = "rag_few_shot";
pub const CARM_FEW_SHOT: &str = "carm_few_shot";
pub const CORRECTION: &str = "correction";
pub const TOT_EXPAND: &str = "tot_expand";

pub const TEMPLATE_IDS: [&str; 7] = [
    ANALYZER,
    DIRECT,
    COT_ONE_SHOT,
    RAG_FEW_SHOT,
    CARM_FEW_SHOT,
    CORRECTION,
    TOT_EXPAND,
];

/// Templates whose output is a model program.
pub fn is_modeling_template(id: &str) -> bool {
    matches!(
        id,
        COT_ONE_SHOT | RAG_FEW_SHOT | CARM_FEW_SHOT | CORRECTION | TOT_EXPAND
    )
}

fn builtin(id: &str) -> Option<&'static str> {
    Some(match id {
        ANALYZER => include_str!("../../prompts/analyzer.txt"),
        DIRECT => include_str!("../../prompts/direct.txt"),
        COT_ONE_SHOT => include_str!("../../prompts/cot_one_shot.txt"),
        RAG_FEW_SHOT => include_str!("../../prompts/rag_few_shot.txt"),
        CARM_FEW_SHOT => include_str!("../../prompts/carm_few_shot.txt"),
        CORRECTION => include_str!("../../prompts/correction.txt"),
        TOT_EXPAND => include_str!("../../prompts/tot_expand.txt"),
        _ => return None,
    })
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").expect("valid regex"))
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` needs slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("cannot read template `{id}` from {path}: {message}")]
    Io { id: String, path: String, message: String },
}

pub type Slots = BTreeMap<&'static str, String>;

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            body: body.into(),
        }
    }

    /// Slot names referenced by the body, in order of first appearance.
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in slot_pattern().captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Single-pass substitution: slot values are never re-scanned, so text
    /// inside a value that looks like `{slot}` is left alone.
    pub fn render(&self, slots: &Slots) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut last = 0;
        for cap in slot_pattern().captures_iter(&self.body) {
            let whole = cap.get(0).expect("match");
            let name = &cap[1];
            let value = slots.get(name).ok_or_else(|| TemplateError::MissingSlot {
                template: self.id.clone(),
                slot: name.to_string(),
            })?;
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TEMPLATE_IDS
            .iter()
            .map(|id| (id.to_string(), PromptTemplate::new(*id, builtin(id).expect("bundled"))))
            .collect();
        Self { templates }
    }

    /// Built-in templates, overridden by any `<id>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for id in TEMPLATE_IDS {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    id: id.to_string(),
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                set.templates.insert(id.to_string(), PromptTemplate::new(id, body));
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn render(&self, id: &str, slots: &Slots) -> Result<String, TemplateError> {
        self.get(id)?.render(slots)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
