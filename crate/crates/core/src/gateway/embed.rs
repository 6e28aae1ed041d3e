//! Offline feature-hashing embedder.
//!
//! Hashes lowercase word unigrams and bigrams into a fixed number of signed
//! buckets and L2-normalizes. Deterministic across platforms and runs, which
//! is all the offline retrieval paths need.

use super::{BackendError, Embedder};
use crate::store::Embedding;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            model: format!("hashing-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0f64; self.dim];
        let mut add = |feature: &str| {
            let h = fnv1a(feature.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            v[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        };
        for w in &words {
            add(w);
        }
        for pair in words.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter().map(|x| (x / norm) as f32).collect()
        } else {
            vec![0.0; self.dim]
        }
    }
}

impl Embedder for HashingEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(self.embed_text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::cosine_similarity;

    #[test]
    fn identical_text_identical_vector() {
        let e = HashingEmbedder::new(64);
        let a = e.embed_text("Schedule nurses over a week");
        assert_eq!(a, e.embed_text("schedule   NURSES over a week!"));
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn related_text_scores_higher() {
        let e = HashingEmbedder::new(256);
        let q = e.embed_text("travelling salesman tour over cities with travel costs");
        let near = e.embed_text("a salesman tour visiting cities minimizing travel costs");
        let far = e.embed_text("pack items of given weights into bins of fixed capacity");
        assert!(cosine_similarity(&q, &near).unwrap() > cosine_similarity(&q, &far).unwrap());
    }

    #[test]
    fn empty_text_is_zero() {
        let e = HashingEmbedder::new(8);
        assert!(e.embed_text("  ").iter().all(|x| *x == 0.0));
    }
}
