use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::rng::stream;

/// Deterministic offline embedder.
///
/// Each lowercase alphanumeric token maps to a Gaussian vector seeded by the
/// token's hash; a text's embedding is the sum of its token vectors plus a
/// smaller vector seeded by the whole text (so reorderings differ), scaled to
/// unit length. Texts sharing words therefore have correlated embeddings.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    model_id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashEmbedder {
            dim,
            model_id: format!("hash-embedder-{dim}"),
        }
    }

    fn add_gaussian(&self, acc: &mut [f64], labels: &[&str], scale: f64) {
        let mut rng = stream(0, labels);
        for a in acc.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *a += scale * z;
        }
    }
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl TextEmbedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let toks = tokens(text);
        if toks.is_empty() {
            warn!("empty text embedded as a zero vector");
            return Ok(EmbeddingVector::zeros(self.dim, &self.model_id));
        }
        let mut acc = vec![0.0f64; self.dim];
        for t in &toks {
            self.add_gaussian(&mut acc, &["token", t], 1.0);
        }
        self.add_gaussian(&mut acc, &["text", text], 0.5);
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = acc.iter().map(|v| (v / norm) as f32).collect();
        EmbeddingVector::new(values, &self.model_id)
    }
}
