use rayon::prelude::*;
use twox_hash::XxHash64;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector, DEFAULT_DIM};

/// Signed feature hashing of lower-cased character n-grams.
///
/// Each n-gram is hashed with the seed; the low bits pick a bucket and the top
/// bit picks the sign. Text shorter than `n` contributes itself as one gram.
/// Empty text (or a vector whose counts cancel out) maps to the basis vector e0.
pub fn hash_ngram_embed(text: &str, dim: usize, n: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "hash embedding needs dim >= 2");
    assert!((2..=5).contains(&n), "n-gram length must be within 2..=5");

    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = vec![0f32; dim];
    let mut gram = String::with_capacity(4 * n);
    let mut add = |window: &[char]| {
        gram.clear();
        gram.extend(window);
        let h = XxHash64::oneshot(seed, gram.as_bytes());
        let bucket = (h % dim as u64) as usize;
        counts[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    match chars.len() {
        0 => return EmbeddingVector::basis(dim, 0),
        len if len < n => add(&chars),
        _ => chars.windows(n).for_each(&mut add),
    }
    EmbeddingVector::normalized(counts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashNgramEmbedder {
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            n: 3,
            seed: 42,
        }
    }
}

impl HashNgramEmbedder {
    pub fn new(dim: usize, n: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim < 2 || !(2..=5).contains(&n) {
            return Err(EmbedError::InvalidBatch(format!(
                "hash embedder needs dim >= 2 and 2 <= n <= 5 (got dim={dim}, n={n})"
            )));
        }
        Ok(Self { dim, n, seed })
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        hash_ngram_embed(text, self.dim, self.n, self.seed)
    }
}

impl EmbeddingProvider for HashNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("hash_ngram(dim={},n={},seed={})", self.dim, self.n, self.seed)
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.par_iter().map(|t| self.embed(t)).collect())
    }
}
