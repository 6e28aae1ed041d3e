//! Constraint ontology, constraint profiles, and tolerant parsing of
//! constraint-type names produced by an analyzer model.
//!
//! The shipped default ontology (`data/ontology.json`) is a reconstruction:
//! it covers the global constraints that show up in common CP catalogs and
//! is meant to be extended through the ontology file.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

const DEFAULT_ONTOLOGY: &str = include_str!("../data/ontology.json");

/// Longest alias, in words, that the fallback scan will try to match.
const MAX_ALIAS_WORDS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("ontology i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed ontology file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("ontology entry has an empty canonical name")]
    EmptyName,
    #[error("duplicate canonical name `{0}`")]
    DuplicateCanonical(String),
    #[error("alias `{alias}` maps to both `{first}` and `{second}`")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },
}

/// A canonical constraint-type name from the ontology.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstraintType(Arc<str>);

impl ConstraintType {
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ConstraintType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ConstraintType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Known(ConstraintType),
    Unknown,
}

impl Normalized {
    pub fn known(self) -> Option<ConstraintType> {
        match self {
            Normalized::Known(t) => Some(t),
            Normalized::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OntologyEntry {
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// The closed set of constraint types profiles are drawn from.
#[derive(Debug, Clone)]
pub struct Ontology {
    entries: Vec<ConstraintType>,
    aliases: HashMap<String, usize>,
}

/// Case-folds and drops everything that is not a letter or digit.
pub fn fold_name(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl Ontology {
    pub fn from_entries(entries: Vec<OntologyEntry>) -> Result<Self, OntologyError> {
        let mut types = Vec::with_capacity(entries.len());
        let mut aliases: HashMap<String, usize> = HashMap::new();

        for entry in &entries {
            let canonical = entry.canonical.trim();
            if fold_name(canonical).is_empty() {
                return Err(OntologyError::EmptyName);
            }
            types.push(ConstraintType(Arc::from(canonical)));
        }

        // Canonical names claim their own folded form first so that an alias
        // of one entry can never shadow another entry's canonical name.
        for (idx, t) in types.iter().enumerate() {
            let folded = fold_name(t.name());
            if let Some(&prev) = aliases.get(&folded) {
                if prev != idx {
                    return Err(OntologyError::DuplicateCanonical(t.name().to_string()));
                }
            }
            aliases.insert(folded, idx);
        }
        for (idx, entry) in entries.iter().enumerate() {
            for alias in &entry.aliases {
                let folded = fold_name(alias);
                if folded.is_empty() {
                    continue;
                }
                match aliases.get(&folded) {
                    Some(&prev) if prev != idx => {
                        return Err(OntologyError::AmbiguousAlias {
                            alias: alias.clone(),
                            first: types[prev].name().to_string(),
                            second: types[idx].name().to_string(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        aliases.insert(folded, idx);
                    }
                }
            }
        }

        Ok(Self {
            entries: types,
            aliases,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        let entries: Vec<OntologyEntry> = serde_json::from_str(text)?;
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, OntologyError> {
        let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The built-in ontology shipped with the crate.
    pub fn default_ontology() -> Self {
        Self::from_json(DEFAULT_ONTOLOGY).expect("bundled ontology is valid")
    }

    pub fn entries(&self) -> &[ConstraintType] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, canonical: &str) -> Option<ConstraintType> {
        self.entries.iter().find(|t| t.name() == canonical).cloned()
    }

    pub fn contains(&self, t: &ConstraintType) -> bool {
        self.entries.iter().any(|e| e == t)
    }

    /// Maps a raw spelling onto its canonical type. Never fails: unmatched
    /// input yields [`Normalized::Unknown`].
    pub fn normalize(&self, raw: &str) -> Normalized {
        match self.aliases.get(&fold_name(raw)) {
            Some(&idx) => Normalized::Known(self.entries[idx].clone()),
            None => Normalized::Unknown,
        }
    }

    /// Word-boundary scan for any alias occurring in free text.
    pub fn scan_text(&self, text: &str) -> ConstraintProfile {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
            .collect();
        let mut found = BTreeSet::new();
        for start in 0..words.len() {
            let mut joined = String::new();
            for word in words.iter().skip(start).take(MAX_ALIAS_WORDS) {
                joined.push_str(word);
                if let Some(&idx) = self.aliases.get(&joined) {
                    found.insert(self.entries[idx].clone());
                }
            }
        }
        ConstraintProfile(found)
    }

    /// Comma-separated canonical names, used to tell the analyzer what it may answer.
    pub fn catalog(&self) -> String {
        self.entries
            .iter()
            .map(ConstraintType::name)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl Default for Ontology {
    fn default() -> Self {
        Self::default_ontology()
    }
}

/// A set of constraint types; the retrieval key of a problem.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ConstraintProfile(BTreeSet<ConstraintType>);

impl ConstraintProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: ConstraintType) -> bool {
        self.0.insert(t)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, t: &ConstraintType) -> bool {
        self.0.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConstraintType> {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn union_len(&self, other: &Self) -> usize {
        self.0.union(&other.0).count()
    }

    pub fn union_with(&mut self, other: &Self) {
        self.0.extend(other.0.iter().cloned());
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|t| t.name().to_string()).collect()
    }

    /// Builds a profile from names, normalizing each through the ontology.
    /// Returns the profile and the names that did not resolve.
    pub fn from_names<S: AsRef<str>>(names: &[S], ontology: &Ontology) -> (Self, Vec<String>) {
        let mut profile = Self::new();
        let mut unknown = Vec::new();
        for name in names {
            match ontology.normalize(name.as_ref()) {
                Normalized::Known(t) => {
                    profile.insert(t);
                }
                Normalized::Unknown => unknown.push(name.as_ref().to_string()),
            }
        }
        (profile, unknown)
    }

    /// Renders as a JSON list of quoted names, the format the analyzer is asked for.
    pub fn render(&self) -> String {
        serde_json::to_string(&self.names()).expect("string list serializes")
    }
}

impl FromIterator<ConstraintType> for ConstraintProfile {
    fn from_iter<I: IntoIterator<Item = ConstraintType>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Serialize for ConstraintProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(ConstraintType::name))
    }
}

/// Reads a profile back from a report. Names are taken as canonical; no
/// ontology is consulted.
impl<'de> Deserialize<'de> for ConstraintProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Ok(Self(names.into_iter().map(|n| ConstraintType(Arc::from(n))).collect()))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("analyzer output contains a malformed constraint list: {snippet}")]
pub struct ProfileParseError {
    pub snippet: String,
}

/// Result of parsing an analyzer response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedProfile {
    pub profile: ConstraintProfile,
    /// Names that were present but did not resolve against the ontology.
    pub unknown: Vec<String>,
    /// True when the bracketed-list path failed and the alias scan was used.
    pub used_fallback: bool,
}

enum ListParse {
    Absent,
    Malformed(String),
    Names(Vec<String>),
}

fn parse_bracketed_list(text: &str) -> ListParse {
    let Some(open) = text.find('[') else {
        return ListParse::Absent;
    };
    let Some(close_rel) = text[open..].find(']') else {
        return ListParse::Malformed(text[open..].chars().take(80).collect());
    };
    let inner = &text[open + 1..open + close_rel];
    let snippet = || text[open..=open + close_rel].chars().take(80).collect::<String>();

    let mut names = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(quote) = chars.next() else { break };
        if quote != '"' && quote != '\'' {
            return ListParse::Malformed(snippet());
        }
        let mut name = String::new();
        let mut closed = false;
        for c in chars.by_ref() {
            if c == quote {
                closed = true;
                break;
            }
            name.push(c);
        }
        if !closed {
            return ListParse::Malformed(snippet());
        }
        names.push(name);
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.next() {
            None => break,
            Some(',') => continue,
            Some(_) => return ListParse::Malformed(snippet()),
        }
    }
    ListParse::Names(names)
}

/// Parses an analyzer response into a profile.
///
/// The bracketed list of quoted names is preferred; when there is none, or it
/// is malformed, the whole text is scanned for aliases. Unknown names are
/// dropped and reported in [`ParsedProfile::unknown`].
pub fn parse_profile(raw: &str, ontology: &Ontology) -> Result<ParsedProfile, ProfileParseError> {
    let malformed = match parse_bracketed_list(raw) {
        ListParse::Names(names) => {
            let (profile, unknown) = ConstraintProfile::from_names(&names, ontology);
            if !unknown.is_empty() {
                log::debug!("dropped {} unknown constraint name(s): {:?}", unknown.len(), unknown);
            }
            return Ok(ParsedProfile {
                profile,
                unknown,
                used_fallback: false,
            });
        }
        ListParse::Absent => None,
        ListParse::Malformed(snippet) => Some(snippet),
    };

    let profile = ontology.scan_text(raw);
    match malformed {
        Some(snippet) if profile.is_empty() && !raw.trim().is_empty() => Err(ProfileParseError { snippet }),
        _ => Ok(ParsedProfile {
            profile,
            unknown: Vec::new(),
            used_fallback: true,
        }),
    }
}
