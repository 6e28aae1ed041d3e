use serde::{Deserialize, Serialize};

use crate::gateway::{extract_code_block, EmptyResponse, LlmResponse};

/// Where a candidate came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: String,
    /// Correction round that produced it; 0 for initial generations.
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
}

/// A generated model program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub source: String,
    /// The response had no code fence; the whole text was taken as source.
    #[serde(default)]
    pub unfenced: bool,
    pub completion_tokens: u64,
    pub provenance: Provenance,
}

impl CandidateModel {
    pub fn new(source: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            source: source.into(),
            unfenced: false,
            completion_tokens: 0,
            provenance,
        }
    }

    pub fn from_response(
        response: &LlmResponse,
        language: &str,
        provenance: Provenance,
    ) -> Result<Self, EmptyResponse> {
        let code = extract_code_block(&response.text, language)?;
        Ok(Self {
            source: code.source,
            unfenced: !code.fenced,
            completion_tokens: response.completion_tokens,
            provenance,
        })
    }
}
