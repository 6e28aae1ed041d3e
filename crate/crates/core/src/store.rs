//! Exemplar knowledge bases: the modeling library and the correction
//! database, both stored as JSON Lines.
//!
//! Field order on disk is fixed by the record structs below, and embeddings
//! are `f32`, so writing a loaded canonical file reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ontology::{ConstraintProfile, Ontology};

/// Chunk size, in whitespace-delimited words, for description embeddings.
pub const CHUNK_WORDS: usize = 700;
/// Overlap between consecutive chunks, in words.
pub const CHUNK_OVERLAP_WORDS: usize = 100;

pub type Embedding = Vec<f32>;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("vector lengths differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
}

/// Cosine similarity, accumulated in `f64`.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity with degenerate inputs treated as "no signal".
pub fn cosine_or_zero(u: &[f32], v: &[f32]) -> f64 {
    cosine_similarity(u, v).unwrap_or(0.0)
}

/// Splits text into overlapping word windows. Empty text yields one empty chunk.
pub fn chunk_words(text: &str, size: usize, overlap: usize) -> Vec<String> {
    assert!(size > overlap, "chunk size must exceed overlap");
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= size {
        return vec![words.join(" ")];
    }
    let step = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + size).min(words.len());
        chunks.push(words[start..end].join(" "));
        if end == words.len() {
            break;
        }
        start += step;
    }
    chunks
}

pub fn description_chunks(description: &str) -> Vec<String> {
    chunk_words(description, CHUNK_WORDS, CHUNK_OVERLAP_WORDS)
}

/// On-disk shape of a modeling exemplar. Optional fields are filled by `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarRecord {
    pub id: String,
    pub description: String,
    pub solution_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    /// Embeddings of the second and later description chunks, present only
    /// for descriptions longer than one chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_embeddings: Option<Vec<Embedding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// On-disk shape of a correction exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionRecord {
    pub id: String,
    pub description: String,
    pub incorrect_code: String,
    pub correction_path: String,
    pub correct_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Exemplar {
    pub id: String,
    pub description: String,
    pub solution_code: String,
    pub profile: ConstraintProfile,
    /// One embedding per description chunk; empty when not indexed.
    pub chunk_embeddings: Vec<Embedding>,
    pub category: Option<String>,
}

impl Exemplar {
    pub fn has_embedding(&self) -> bool {
        !self.chunk_embeddings.is_empty()
    }

    /// Best chunk similarity against a query vector.
    pub fn best_chunk_similarity(&self, query: &[f32]) -> f64 {
        self.chunk_embeddings
            .iter()
            .map(|e| cosine_or_zero(query, e))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_record(&self) -> ExemplarRecord {
        let mut chunks = self.chunk_embeddings.iter().cloned();
        let embedding = chunks.next();
        let rest: Vec<Embedding> = chunks.collect();
        ExemplarRecord {
            id: self.id.clone(),
            description: self.description.clone(),
            solution_code: self.solution_code.clone(),
            profile: Some(self.profile.names()),
            embedding,
            chunk_embeddings: (!rest.is_empty()).then_some(rest),
            category: self.category.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionExemplar {
    pub id: String,
    pub description: String,
    pub incorrect_code: String,
    pub correction_path: String,
    pub correct_code: String,
    pub profile: ConstraintProfile,
    pub error_embedding: Option<Embedding>,
    pub category: Option<String>,
}

impl CorrectionExemplar {
    pub fn to_record(&self) -> CorrectionRecord {
        CorrectionRecord {
            id: self.id.clone(),
            description: self.description.clone(),
            incorrect_code: self.incorrect_code.clone(),
            correction_path: self.correction_path.clone(),
            correct_code: self.correct_code.clone(),
            profile: Some(self.profile.names()),
            error_embedding: self.error_embedding.clone(),
            category: self.category.clone(),
        }
    }
}

/// Text a correction exemplar is embedded under: its diagnosis.
pub fn correction_embedding_text(record: &CorrectionRecord) -> &str {
    &record.correction_path
}

/// Reads a JSON Lines file into raw records, skipping blank lines.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_records(&text, &path.display().to_string())
}

pub fn parse_records<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<Vec<(usize, T)>, StoreError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| StoreError::Format {
            path: origin.to_string(),
            line: idx + 1,
            message: format!("malformed record: {e}"),
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)
}

struct Validator<'a> {
    origin: String,
    ontology: &'a Ontology,
    dim: Option<usize>,
    ids: std::collections::HashSet<String>,
}

impl<'a> Validator<'a> {
    fn new(origin: String, ontology: &'a Ontology, dim: Option<usize>) -> Self {
        Self {
            origin,
            ontology,
            dim,
            ids: Default::default(),
        }
    }

    fn fail(&self, line: usize, message: impl Into<String>) -> StoreError {
        StoreError::Format {
            path: self.origin.clone(),
            line,
            message: message.into(),
        }
    }

    fn id(&mut self, line: usize, id: &str) -> Result<(), StoreError> {
        if id.trim().is_empty() {
            return Err(self.fail(line, "empty id"));
        }
        if !self.ids.insert(id.to_string()) {
            return Err(self.fail(line, format!("duplicate id `{id}`")));
        }
        Ok(())
    }

    fn embedding(&mut self, line: usize, e: &[f32]) -> Result<(), StoreError> {
        if e.is_empty() {
            return Err(self.fail(line, "empty embedding"));
        }
        match self.dim {
            Some(d) if d != e.len() => Err(self.fail(
                line,
                format!("embedding has length {}, store dimension is {d}", e.len()),
            )),
            Some(_) => Ok(()),
            None => {
                self.dim = Some(e.len());
                Ok(())
            }
        }
    }

    fn profile(&self, line: usize, names: Option<&Vec<String>>) -> Result<ConstraintProfile, StoreError> {
        let names = names.ok_or_else(|| self.fail(line, "missing profile (run `index` first)"))?;
        let (profile, unknown) = ConstraintProfile::from_names(names, self.ontology);
        if let Some(bad) = unknown.first() {
            return Err(self.fail(line, format!("profile names `{bad}`, which is not in the ontology")));
        }
        Ok(profile)
    }
}

/// The modeling knowledge base: (description, solution) pairs with profiles.
#[derive(Debug, Clone, Default)]
pub struct ExemplarStore {
    exemplars: Vec<Exemplar>,
    embedding_dim: Option<usize>,
    source_path: Option<PathBuf>,
}

impl ExemplarStore {
    pub fn from_exemplars(exemplars: Vec<Exemplar>) -> Self {
        let embedding_dim = exemplars
            .iter()
            .flat_map(|e| e.chunk_embeddings.first())
            .map(Vec::len)
            .next();
        Self {
            exemplars,
            embedding_dim,
            source_path: None,
        }
    }

    pub fn load(path: &Path, ontology: &Ontology) -> Result<Self, StoreError> {
        let records = read_records::<ExemplarRecord>(path)?;
        let mut store = Self::from_records(records, ontology, &path.display().to_string())?;
        store.source_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn from_records(
        records: Vec<(usize, ExemplarRecord)>,
        ontology: &Ontology,
        origin: &str,
    ) -> Result<Self, StoreError> {
        let mut v = Validator::new(origin.to_string(), ontology, None);
        let mut exemplars = Vec::with_capacity(records.len());
        for (line, r) in records {
            v.id(line, &r.id)?;
            let profile = v.profile(line, r.profile.as_ref())?;
            let mut chunk_embeddings = Vec::new();
            if let Some(e) = r.embedding {
                v.embedding(line, &e)?;
                chunk_embeddings.push(e);
                for extra in r.chunk_embeddings.into_iter().flatten() {
                    v.embedding(line, &extra)?;
                    chunk_embeddings.push(extra);
                }
            } else if r.chunk_embeddings.is_some() {
                return Err(v.fail(line, "chunk_embeddings without embedding"));
            }
            exemplars.push(Exemplar {
                id: r.id,
                description: r.description,
                solution_code: r.solution_code,
                profile,
                chunk_embeddings,
                category: r.category,
            });
        }
        Ok(Self {
            exemplars,
            embedding_dim: v.dim,
            source_path: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let records: Vec<ExemplarRecord> = self.exemplars.iter().map(Exemplar::to_record).collect();
        write_records(path, &records)
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&Exemplar> {
        self.exemplars.iter().find(|e| e.id == id)
    }
}

/// The correction database.
#[derive(Debug, Clone, Default)]
pub struct CorrectionStore {
    exemplars: Vec<CorrectionExemplar>,
    embedding_dim: Option<usize>,
    source_path: Option<PathBuf>,
}

impl CorrectionStore {
    pub fn from_exemplars(exemplars: Vec<CorrectionExemplar>) -> Self {
        let embedding_dim = exemplars
            .iter()
            .flat_map(|e| e.error_embedding.as_ref())
            .map(Vec::len)
            .next();
        Self {
            exemplars,
            embedding_dim,
            source_path: None,
        }
    }

    pub fn load(path: &Path, ontology: &Ontology) -> Result<Self, StoreError> {
        let records = read_records::<CorrectionRecord>(path)?;
        let mut store = Self::from_records(records, ontology, &path.display().to_string())?;
        store.source_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn from_records(
        records: Vec<(usize, CorrectionRecord)>,
        ontology: &Ontology,
        origin: &str,
    ) -> Result<Self, StoreError> {
        let mut v = Validator::new(origin.to_string(), ontology, None);
        let mut exemplars = Vec::with_capacity(records.len());
        for (line, r) in records {
            v.id(line, &r.id)?;
            for (field, value) in [
                ("description", &r.description),
                ("incorrect_code", &r.incorrect_code),
                ("correction_path", &r.correction_path),
                ("correct_code", &r.correct_code),
            ] {
                if value.trim().is_empty() {
                    return Err(v.fail(line, format!("empty `{field}`")));
                }
            }
            let profile = v.profile(line, r.profile.as_ref())?;
            if let Some(e) = &r.error_embedding {
                v.embedding(line, e)?;
            }
            exemplars.push(CorrectionExemplar {
                id: r.id,
                description: r.description,
                incorrect_code: r.incorrect_code,
                correction_path: r.correction_path,
                correct_code: r.correct_code,
                profile,
                error_embedding: r.error_embedding,
                category: r.category,
            });
        }
        Ok(Self {
            exemplars,
            embedding_dim: v.dim,
            source_path: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let records: Vec<CorrectionRecord> = self.exemplars.iter().map(CorrectionExemplar::to_record).collect();
        write_records(path, &records)
    }

    pub fn exemplars(&self) -> &[CorrectionExemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankError {
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("exemplar `{0}` has no embedding; run `index` with embeddings enabled")]
    MissingEmbedding(String),
}

/// Ranks exemplars by their best chunk's cosine similarity to `query`.
///
/// Result is non-increasing in score; ties keep store order. Each exemplar
/// appears at most once. `exclude` drops one id (the query problem itself).
pub fn rank_by_embedding<'s>(
    query: &[f32],
    store: &'s ExemplarStore,
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<(&'s Exemplar, f64)>, RankError> {
    if store.is_empty() {
        return Err(RankError::EmptyStore);
    }
    let mut scored = Vec::with_capacity(store.len());
    for e in store.exemplars() {
        if exclude == Some(e.id.as_str()) {
            continue;
        }
        if !e.has_embedding() {
            return Err(RankError::MissingEmbedding(e.id.clone()));
        }
        scored.push((e, e.best_chunk_similarity(query)));
    }
    // stable sort keeps file order among equal scores
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}
