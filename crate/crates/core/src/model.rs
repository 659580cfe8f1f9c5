//! Corpus-independent document schema shared by every subsystem.
//!
//! Patents and publications are flattened into one [`Document`] shape: a
//! handful of named text parts, an open metadata map and an optional dense
//! [`Embedding`]. The canonical JSON encoding uses the field names the query
//! API exposes (`id`, `index`, `documentParts`, `vector`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default embedding dimension produced by the document encoder.
pub const DEFAULT_DIM: usize = 768;

/// Suffix appended to a corpus name to form the index name used by the API.
pub const INDEX_SUFFIX: &str = "_cos";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid corpus id {0:?}: expected lowercase alphanumerics or underscore")]
    InvalidCorpus(String),
    #[error("unknown document part {0:?}")]
    UnknownPart(String),
    #[error("unknown similarity metric {0:?}")]
    UnknownMetric(String),
    #[error("embedding must have at least one component")]
    EmptyEmbedding,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("unknown index name {0:?}")]
    UnknownIndexName(String),
}

/// Short identifier of a corpus such as `epo` or `semanticscholar`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CorpusId(String);

impl CorpusId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let valid = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if valid {
            Ok(Self(name))
        } else {
            Err(ModelError::InvalidCorpus(name))
        }
    }

    /// Parses an API index name (`epo_cos`) back into its corpus.
    pub fn from_index_name(index: &str) -> Result<Self, ModelError> {
        match index.strip_suffix(INDEX_SUFFIX) {
            Some(corpus) if !corpus.is_empty() => {
                Self::new(corpus).map_err(|_| ModelError::UnknownIndexName(index.to_owned()))
            }
            _ => Err(ModelError::UnknownIndexName(index.to_owned())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Index name under which the corpus is exposed, e.g. `epo_cos`.
    pub fn index_name(&self) -> String {
        format!("{}{}", self.0, INDEX_SUFFIX)
    }
}

impl TryFrom<String> for CorpusId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CorpusId> for String {
    fn from(value: CorpusId) -> Self {
        value.0
    }
}

impl fmt::Display for CorpusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKey {
    Title,
    Abstract,
    Claims,
    Description,
}

impl PartKey {
    pub const ALL: [PartKey; 4] = [Self::Title, Self::Abstract, Self::Claims, Self::Description];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Title => "title",
            Self::Abstract => "abstract",
            Self::Claims => "claims",
            Self::Description => "description",
        }
    }
}

impl FromStr for PartKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownPart(s.to_owned()))
    }
}

impl fmt::Display for PartKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentPart {
    pub key: PartKey,
    pub value: String,
}

impl DocumentPart {
    pub fn new(key: PartKey, value: impl Into<String>) -> Self {
        Self {
            key,
            value: value.into(),
        }
    }
}

/// Dense vector with finite components. The dimension is its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if let Some(index) = components.iter().position(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Returns a unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Embedding> {
        let norm = self.norm();
        if norm == 0.0 {
            return None;
        }
        Some(Self(self.0.iter().map(|c| c / norm).collect()))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = ModelError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(value: Embedding) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    Cosine,
    L1,
    L2,
}

impl SimilarityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::L1 => "l1",
            Self::L2 => "l2",
        }
    }

    /// Cosine is a similarity; l1 and l2 are distances.
    pub fn higher_is_closer(self) -> bool {
        matches!(self, Self::Cosine)
    }
}

impl FromStr for SimilarityMetric {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(ModelError::UnknownMetric(other.to_owned())),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A patent or publication in the unified schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(rename = "index")]
    pub corpus: CorpusId,
    #[serde(rename = "documentParts")]
    pub parts: Vec<DocumentPart>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(rename = "vector", default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

impl Document {
    pub fn new(id: impl Into<String>, corpus: CorpusId) -> Self {
        Self {
            id: id.into(),
            corpus,
            parts: Vec::new(),
            metadata: BTreeMap::new(),
            embedding: None,
        }
    }

    pub fn with_part(mut self, key: PartKey, value: impl Into<String>) -> Self {
        self.parts.push(DocumentPart::new(key, value));
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// First part with the given key.
    pub fn part(&self, key: PartKey) -> Option<&str> {
        self.parts
            .iter()
            .find(|p| p.key == key)
            .map(|p| p.value.as_str())
    }

    pub fn title(&self) -> Option<&str> {
        self.part(PartKey::Title)
    }

    pub fn key(&self) -> DocKey {
        DocKey::new(self.corpus.clone(), self.id.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("document serialization is infallible")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Store key of a document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocKey {
    pub corpus: CorpusId,
    pub id: String,
}

impl DocKey {
    pub fn new(corpus: CorpusId, id: impl Into<String>) -> Self {
        Self {
            corpus,
            id: id.into(),
        }
    }
}

impl fmt::Display for DocKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.corpus, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("empty id")]
    EmptyId,
    #[error("no parts")]
    NoParts,
    #[error("all parts are empty")]
    AllPartsEmpty,
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
}

/// Checks every document invariant; an empty list means the document is valid.
pub fn validate_document(doc: &Document, dim: usize) -> Vec<Violation> {
    let mut violations = Vec::new();
    if doc.id.trim().is_empty() {
        violations.push(Violation::EmptyId);
    }
    if doc.parts.is_empty() {
        violations.push(Violation::NoParts);
    } else if doc.parts.iter().all(|p| p.value.trim().is_empty()) {
        violations.push(Violation::AllPartsEmpty);
    }
    if let Some(embedding) = &doc.embedding {
        if embedding.dim() != dim {
            violations.push(Violation::DimensionMismatch {
                expected: dim,
                actual: embedding.dim(),
            });
        }
        if let Some(index) = embedding.as_slice().iter().position(|c| !c.is_finite()) {
            violations.push(Violation::NonFinite { index });
        }
    }
    violations
}
