//! Sentence embeddings: providers, batches, on-disk cache and the MNR-loss diagnostic.

mod cache;
mod hash;
mod remote;
mod tfidf;

use std::collections::HashSet;
use std::ops::Deref;

use thiserror::Error;

use crate::record::SerializedSentence;

pub use cache::{load_cache, save_cache, CACHE_MAGIC};
pub(crate) use cache::{decode_container, encode_container, ByteReader};
pub use hash::{hash_ngram_embed, HashNgramEmbedder};
pub use remote::{remote_embed, HealthStatus, RemoteEmbedder, MAX_REMOTE_CHUNK};
pub use tfidf::{tfidf_embed, TfidfEmbedder};

/// Tolerance for the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("corrupt cache: {0}")]
    CorruptCache(String),
    #[error("unsupported cache version {found:?}")]
    VersionMismatch { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `values`. A zero (or empty-norm) vector becomes the basis vector e0.
    pub fn normalized(mut values: Vec<f32>) -> Self {
        assert!(!values.is_empty(), "embedding dimension must be positive");
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
        }
        Self(values)
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for EmbeddingVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Row-major embedding matrix keyed by record id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    provider_tag: String,
}

impl EmbeddingBatch {
    pub fn new(
        ids: Vec<String>,
        dim: usize,
        data: Vec<f32>,
        provider_tag: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidBatch("dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(EmbedError::InvalidBatch(format!(
                "{} ids but {} values for dim {dim}",
                ids.len(),
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(EmbedError::InvalidBatch(format!("duplicate record id {dup:?}")));
        }
        Ok(Self {
            ids,
            dim,
            data,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn from_vectors(
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        dim: usize,
        provider_tag: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            if v.dim() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            data.extend_from_slice(&v);
        }
        Self::new(ids, dim, data, provider_tag)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub(crate) fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn into_parts(self) -> (Vec<String>, usize, Vec<f32>, String) {
        (self.ids, self.dim, self.data, self.provider_tag)
    }
}

/// Something that turns text into unit-norm vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Names the provider and its parameters; stored alongside cached vectors.
    fn tag(&self) -> String;

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Embeds sentences in order, checking the provider's output shape.
pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    sentences: &[SerializedSentence],
) -> Result<EmbeddingBatch, EmbedError> {
    if sentences.is_empty() {
        return Err(EmbedError::InvalidBatch("no sentences to embed".into()));
    }
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let vectors = provider.embed_texts(&texts)?;
    if vectors.len() != sentences.len() {
        return Err(EmbedError::ProtocolError(format!(
            "provider returned {} vectors for {} sentences",
            vectors.len(),
            sentences.len()
        )));
    }
    // A provider may learn its dimension from its first response.
    let dim = match provider.dim() {
        0 => vectors[0].dim(),
        d => d,
    };
    let ids = sentences.iter().map(|s| s.record_id.clone()).collect();
    EmbeddingBatch::from_vectors(ids, vectors, dim, provider.tag())
}

/// Multiple-negatives-ranking loss with unscaled cosine similarity.
///
/// For each anchor `i` the positives of every other pair act as negatives:
/// `L_i = -ln(exp(sim(a_i, p_i)) / sum_j exp(sim(a_i, p_j)))`, averaged over the batch.
pub fn mnr_loss(anchors: &[EmbeddingVector], positives: &[EmbeddingVector]) -> Result<f64, EmbedError> {
    if anchors.is_empty() || anchors.len() != positives.len() {
        return Err(EmbedError::InvalidBatch(format!(
            "need equal non-zero anchor/positive counts, got {} and {}",
            anchors.len(),
            positives.len()
        )));
    }
    let dim = anchors[0].dim();
    if let Some(bad) = anchors.iter().chain(positives).find(|v| v.dim() != dim) {
        return Err(EmbedError::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let total: f64 = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let sims: Vec<f64> = positives.iter().map(|p| cosine(a, p)).collect();
            let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum_exp = max + sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            log_sum_exp - sims[i]
        })
        .sum();
    Ok((total / anchors.len() as f64).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec())
    }

    #[test]
    fn normalization() {
        let e = v(&[3.0, 4.0]);
        assert!((e.norm() - 1.0).abs() < NORM_TOLERANCE);
        assert_eq!(&*v(&[0.0, 0.0, 0.0]), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_validation() {
        assert!(EmbeddingBatch::new(vec!["a".into()], 2, vec![1.0], "t").is_err());
        assert!(EmbeddingBatch::new(vec!["a".into(), "a".into()], 1, vec![1.0, 1.0], "t").is_err());
        let b = EmbeddingBatch::new(vec!["a".into(), "b".into()], 2, vec![1.0, 0.0, 0.0, 1.0], "t").unwrap();
        assert_eq!(b.row(1), &[0.0, 1.0]);
        assert_eq!(b.rows().count(), 2);
    }

    #[test]
    fn mnr_single_pair_is_zero() {
        let a = v(&[0.3, 0.7, 0.1]);
        let p = v(&[0.9, -0.1, 0.2]);
        assert_eq!(mnr_loss(&[a], &[p]).unwrap(), 0.0);
    }

    #[test]
    fn mnr_identical_batch_is_ln_n() {
        let x = v(&[0.2, -0.5, 0.8, 0.1]);
        let batch = vec![x; 4];
        let loss = mnr_loss(&batch, &batch).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn mnr_orthogonal_pairs() {
        let e0 = EmbeddingVector::basis(2, 0);
        let e1 = EmbeddingVector::basis(2, 1);
        let loss = mnr_loss(&[e0.clone(), e1.clone()], &[e0, e1]).unwrap();
        // -ln(e / (e + 1))
        let e = std::f64::consts::E;
        assert!((loss - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn mnr_decreases_as_positive_similarity_rises() {
        // Cross terms stay fixed at 0 while sim(a0, p0) increases.
        let e = |x: f32, y: f32, z: f32| v(&[x, y, z]);
        let p = [e(1.0, 0.0, 0.0), e(0.0, 0.0, 1.0)];
        let mut last = f64::INFINITY;
        for t in [0.0f32, 0.3, 0.6, 0.9, 1.0] {
            let a0 = e(t, (1.0 - t * t).sqrt(), 0.0);
            let anchors = [a0, e(0.0, 0.0, 1.0)];
            let loss = mnr_loss(&anchors, &p).unwrap();
            assert!(loss < last, "loss {loss} did not drop below {last} at t={t}");
            assert!(loss >= 0.0);
            last = loss;
        }
    }

    #[test]
    fn mnr_shape_errors() {
        let a = v(&[1.0, 0.0]);
        let b = v(&[1.0, 0.0, 0.0]);
        assert!(matches!(mnr_loss(&[], &[]), Err(EmbedError::InvalidBatch(_))));
        assert!(matches!(
            mnr_loss(std::slice::from_ref(&a), &[a.clone(), a.clone()]),
            Err(EmbedError::InvalidBatch(_))
        ));
        assert!(matches!(
            mnr_loss(&[a], &[b]),
            Err(EmbedError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }
}
