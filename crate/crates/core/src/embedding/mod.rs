//! Text embeddings and item representations.

mod hash;
mod remote;
mod repr;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash::HashEmbedder;
pub use remote::{EmbeddingBackendConfig, RemoteEmbedder};
pub use repr::{
    build_representation, build_representations, Combo, Component, ItemRecords, ItemRepresentation,
    RepresentationSet,
};
pub use store::{load_image_embeddings, write_vector_file, CachedEmbedder, VectorFileHeader};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DimMismatch {
        expected: usize,
        actual: usize,
        context: Option<String>,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: u64, message: String },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("item {item_id} has no {strategy} record")]
    MissingRecord { item_id: String, strategy: String },
    #[error("item {0} has no image embedding")]
    MissingImageEmbedding(String),
    #[error("unknown combo component {0:?}")]
    UnknownComponent(String),
    #[error("remote embedding failed: {0}")]
    Remote(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EmbeddingError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn zeros(dim: usize, model_id: impl Into<String>) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
            model_id: model_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// A frozen text encoder: the same text always maps to the same vector.
pub trait TextEmbedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Concatenates vectors in order. Model ids are joined with `+` when they
/// differ.
///
/// # Panics
/// If `vectors` is empty.
pub fn concat(vectors: &[&EmbeddingVector]) -> EmbeddingVector {
    assert!(!vectors.is_empty(), "concat needs at least one vector");
    let mut values = Vec::with_capacity(vectors.iter().map(|v| v.dim()).sum());
    let mut ids: Vec<&str> = Vec::new();
    for v in vectors {
        values.extend_from_slice(&v.values);
        if !ids.contains(&v.model_id.as_str()) {
            ids.push(&v.model_id);
        }
    }
    EmbeddingVector {
        values,
        model_id: ids.join("+"),
    }
}

/// Splits a concatenated vector back into parts of the given dims.
pub fn split(vector: &EmbeddingVector, dims: &[usize]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
    let total: usize = dims.iter().sum();
    if total != vector.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: total,
            actual: vector.dim(),
            context: None,
        });
    }
    let mut out = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &d in dims {
        out.push(vector.values[offset..offset + d].to_vec());
        offset += d;
    }
    Ok(out)
}

/// Cosine similarity, accumulated in double precision.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    cosine_slices(&a.values, &b.values)
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
            context: None,
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
