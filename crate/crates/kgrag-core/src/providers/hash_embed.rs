//! Seeded feature-hashing text embedder.
//!
//! Hashes character trigrams of the lowercased text into a fixed number of
//! signed buckets and L2-normalizes the result. Deterministic per
//! `(seed, dimension, text)`, cheap, and distance-meaningful enough for
//! desk-scale retrieval: texts sharing many trigrams land close together.

use crate::fnv::Fnv1a64;
use crate::providers::{EmbeddingProvider, EmbeddingVector, ProviderError};

pub const DEFAULT_DIMENSION: usize = 64;
pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
    model_id: String,
}

impl HashingEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            seed,
            model_id: format!("hash-embed-{dimension}-s{seed}"),
        }
    }

    /// Reconstructs the embedder a store was built with from its model id.
    pub fn from_model_id(model_id: &str) -> Option<Self> {
        let rest = model_id.strip_prefix("hash-embed-")?;
        let (dimension, seed) = rest.split_once("-s")?;
        let dimension: usize = dimension.parse().ok()?;
        let seed: u64 = seed.parse().ok()?;
        if dimension == 0 {
            return None;
        }
        Some(Self::new(dimension, seed))
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION, DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("empty text".into()));
        }
        let padded: Vec<char> = std::iter::once('\u{2}')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut values = vec![0.0_f64; self.dimension];
        let seed_bytes = self.seed.to_le_bytes();
        let mut buf = String::new();
        for gram in padded.windows(3) {
            buf.clear();
            buf.extend(gram);
            let mut h = Fnv1a64::new();
            h.update(&seed_bytes);
            h.update(buf.as_bytes());
            let hash = h.finish();
            let bucket = ((hash >> 1) % self.dimension as u64) as usize;
            let sign = if hash & 1 == 1 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Signed contributions cancelled out; fall back to a whole-text bucket.
            let mut h = Fnv1a64::new();
            h.update(&seed_bytes);
            h.update(text.as_bytes());
            values[(h.finish() % self.dimension as u64) as usize] = 1.0;
        } else {
            for v in &mut values {
                *v /= norm;
            }
        }
        Ok(EmbeddingVector { values, model_id: self.model_id.clone() })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
