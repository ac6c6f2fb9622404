//! Embedding index over workflows and action blocks with top-K cosine query.
//!
//! The index is an exhaustive linear scan over normalized vectors; at desk
//! scale (well under 10^4 entries) nothing fancier pays for itself. A
//! deterministic hashing embedder doubles as the test-time substitute for an
//! external embedding model.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_adapter::{Embedder, ProviderError};
use crate::workflow_model::{render_action_document, render_document, Workflow};

/// Default query width.
pub const DEFAULT_K: usize = 3;
/// Default hashing-embedder dimension.
pub const DEFAULT_DIMENSION: usize = 256;

/// Unit-norm embedding. Construction normalizes and rejects non-finite input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn normalized(values: Vec<f64>) -> Result<Self, String> {
        if values.len() < 2 {
            return Err(format!("dimension {} below minimum 2", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite embedding component".to_string());
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Zero vector maps to the first basis vector.
            let mut basis = vec![0.0; values.len()];
            basis[0] = 1.0;
            return Ok(EmbeddingVector { values: basis });
        }
        Ok(EmbeddingVector {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity; inputs are already unit vectors, so this is a dot
    /// product.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

// ---- Hashing embedder ----

/// FNV-1a, fixed here so bucket assignment is stable across platforms and
/// toolchain versions.
fn fnv1a(token: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in token.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic bag-of-tokens embedding: lowercase alphanumeric tokens
/// hashed into `d` buckets, counts L2-normalized. Zero-token text maps to
/// the first basis vector.
pub fn hash_embed(text: &str, d: usize) -> EmbeddingVector {
    assert!(d >= 2, "dimension must be at least 2");
    let mut counts = vec![0.0f64; d];
    let mut any = false;
    for token in text
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        counts[(fnv1a(token) % d as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        counts[0] = 1.0;
    }
    EmbeddingVector::normalized(counts).expect("finite counts")
}

/// [`Embedder`] over [`hash_embed`].
#[derive(Clone, Copy, Debug)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2);
        HashEmbedder { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dimension)).collect())
    }
}

// ---- Index ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Workflow,
    ActionBlock,
}

/// Where an entry's payload lives in the workflow library.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadRef {
    pub workflow_id: String,
    pub task_id: String,
    #[serde(default)]
    pub action: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: EmbeddingVector,
    pub kind: EntryKind,
    pub payload: PayloadRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceIndex {
    pub dimension: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedder produced dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse index {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Query-time filtering: restrict to an entry kind and/or exclude entries
/// from one task (leave-one-task-out).
#[derive(Clone, Debug, Default)]
pub struct QueryFilter {
    pub kind: Option<EntryKind>,
    pub exclude_task: Option<String>,
}

impl QueryFilter {
    pub fn workflows() -> Self {
        QueryFilter {
            kind: Some(EntryKind::Workflow),
            exclude_task: None,
        }
    }

    pub fn workflows_excluding(task_id: impl Into<String>) -> Self {
        QueryFilter {
            kind: Some(EntryKind::Workflow),
            exclude_task: Some(task_id.into()),
        }
    }

    fn admits(&self, entry: &IndexEntry) -> bool {
        if let Some(kind) = self.kind {
            if entry.kind != kind {
                return false;
            }
        }
        if let Some(task) = &self.exclude_task {
            if &entry.payload.task_id == task {
                return false;
            }
        }
        true
    }
}

/// Builds the two-level index: one workflow entry per workflow (over its
/// rendered document) and one action entry per block (over the block
/// document). Action entry ids are `<workflow_id>::<action>`.
pub fn build_index(
    workflows: &[Workflow],
    embedder: &dyn Embedder,
) -> Result<ExperienceIndex, RetrievalError> {
    let mut ids: Vec<(String, EntryKind, PayloadRef)> = Vec::new();
    let mut documents: Vec<String> = Vec::new();
    for w in workflows {
        let task_id = w.task_id().unwrap_or("unknown").to_string();
        ids.push((
            w.workflow_id.clone(),
            EntryKind::Workflow,
            PayloadRef {
                workflow_id: w.workflow_id.clone(),
                task_id: task_id.clone(),
                action: None,
            },
        ));
        documents.push(render_document(w));
        for (action, block) in &w.action_blocks {
            ids.push((
                format!("{}::{}", w.workflow_id, action),
                EntryKind::ActionBlock,
                PayloadRef {
                    workflow_id: w.workflow_id.clone(),
                    task_id: task_id.clone(),
                    action: Some(action.clone()),
                },
            ));
            documents.push(render_action_document(block));
        }
    }
    let vectors = embedder.embed(&documents)?;
    let dimension = embedder.dimension();
    let mut entries = Vec::with_capacity(ids.len());
    for ((id, kind, payload), vector) in ids.into_iter().zip(vectors) {
        if vector.dimension() != dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: dimension,
                got: vector.dimension(),
            });
        }
        entries.push(IndexEntry {
            id,
            vector,
            kind,
            payload,
        });
    }
    Ok(ExperienceIndex { dimension, entries })
}

impl ExperienceIndex {
    pub fn entry(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Top-k cosine matches for `query`, descending; ties broken by id
    /// ascending. Returns fewer than k when the filtered index is smaller.
    pub fn top_k(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let query_vec = embedder
            .embed(std::slice::from_ref(&query.to_string()))?
            .pop()
            .expect("one vector per text");
        if query_vec.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                got: query_vec.dimension(),
            });
        }
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter(|e| filter.admits(e))
            .map(|e| (e.id.clone(), e.vector.cosine(&query_vec)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Uniform sample of k entries without replacement, deterministic per
    /// seed. Scores are zero by definition.
    pub fn random_k(&self, k: usize, seed: u64, filter: &QueryFilter) -> Vec<(String, f64)> {
        let mut ids: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| filter.admits(e))
            .map(|e| e.id.as_str())
            .collect();
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        ids.into_iter()
            .take(k)
            .map(|id| (id.to_string(), 0.0))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("index serializes");
        fs::write(path, text).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| RetrievalError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// How the guidance layer selects workflows from the index.
#[derive(Clone, Debug, PartialEq)]
pub enum RetrievalMode {
    Similarity,
    Random { seed: u64 },
    LeaveOneTaskOut { exclude_task: String },
}
