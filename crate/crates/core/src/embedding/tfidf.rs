use std::collections::{HashMap, HashSet};

use twox_hash::XxHash64;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::record::SerializedSentence;

const BUCKET_SEED: u64 = 0x7f4a_7c15_9e37_79b9;

/// Whitespace-token TF-IDF, feature-hashed into `dim` buckets.
///
/// The IDF table is fitted once (on the reference side) and reused for every
/// document embedded afterwards. Smoothed IDF is `ln((1 + N) / (1 + df)) + 1`,
/// so tokens unseen at fit time get `ln(1 + N) + 1`.
#[derive(Debug, Clone)]
pub struct TfidfEmbedder {
    dim: usize,
    n_docs: usize,
    doc_freq: HashMap<String, usize>,
    fingerprint: u64,
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl TfidfEmbedder {
    pub fn fit<S: AsRef<str>>(corpus: &[S], dim: usize) -> Result<Self, EmbedError> {
        if corpus.is_empty() {
            return Err(EmbedError::InvalidBatch("TF-IDF needs a non-empty corpus".into()));
        }
        if dim == 0 {
            return Err(EmbedError::InvalidBatch("dimension must be positive".into()));
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut fingerprint = XxHash64::with_seed(dim as u64);
        for doc in corpus {
            let doc = doc.as_ref();
            std::hash::Hasher::write(&mut fingerprint, doc.as_bytes());
            std::hash::Hasher::write_u8(&mut fingerprint, 0xff);
            let distinct: HashSet<String> = tokens(doc).collect();
            for t in distinct {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        Ok(Self {
            dim,
            n_docs: corpus.len(),
            doc_freq,
            fingerprint: std::hash::Hasher::finish(&fingerprint),
        })
    }

    pub fn fit_sentences(corpus: &[SerializedSentence], dim: usize) -> Result<Self, EmbedError> {
        let texts: Vec<&str> = corpus.iter().map(|s| s.text.as_str()).collect();
        Self::fit(&texts, dim)
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(&token.to_lowercase()).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Bucket a (lower-cased) token hashes into.
    pub fn bucket(&self, token: &str) -> usize {
        (XxHash64::oneshot(BUCKET_SEED, token.to_lowercase().as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens(text) {
            *tf.entry(t).or_default() += 1;
        }
        let mut v = vec![0f64; self.dim];
        // Sorted so float accumulation order is independent of hash-map iteration.
        let mut terms: Vec<_> = tf.into_iter().collect();
        terms.sort_unstable();
        for (token, count) in terms {
            v[self.bucket(&token)] += count as f64 * self.idf(&token);
        }
        EmbeddingVector::normalized(v.into_iter().map(|x| x as f32).collect())
    }
}

impl EmbeddingProvider for TfidfEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!(
            "tfidf(dim={},docs={},fit={:016x})",
            self.dim, self.n_docs, self.fingerprint
        )
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        use rayon::prelude::*;
        Ok(texts.par_iter().map(|t| self.embed(t)).collect())
    }
}

/// Fits on `corpus` and embeds every document of it.
pub fn tfidf_embed(corpus: &[SerializedSentence], dim: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let model = TfidfEmbedder::fit_sentences(corpus, dim)?;
    Ok(corpus.iter().map(|s| model.embed(&s.text)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, NORM_TOLERANCE};

    fn sentences(texts: &[&str]) -> Vec<SerializedSentence> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| SerializedSentence {
                record_id: format!("d{i}"),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn single_token_document() {
        let v = tfidf_embed(&sentences(&["hello"]), 32).unwrap();
        assert_eq!(v[0].iter().filter(|&&x| x != 0.0).count(), 1);
        assert!((v[0].norm() - 1.0).abs() < NORM_TOLERANCE);
    }

    #[test]
    fn idf_formula() {
        let m = TfidfEmbedder::fit(&["a b", "a c", "a d"], 64).unwrap();
        assert!((m.idf("a") - 1.0).abs() < 1e-12);
        assert!((m.idf("b") - ((4.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
        assert!((m.idf("zzz") - (4.0f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn disjoint_documents_are_orthogonal() {
        let docs = ["alpha beta", "gamma delta"];
        let m = TfidfEmbedder::fit(&docs, 1024).unwrap();
        let buckets: HashSet<usize> = ["alpha", "beta", "gamma", "delta"].iter().map(|t| m.bucket(t)).collect();
        assert_eq!(buckets.len(), 4, "chosen tokens collide at this dim");
        let v = tfidf_embed(&sentences(&docs), 1024).unwrap();
        assert_eq!(cosine(&v[0], &v[1]), 0.0);
    }

    #[test]
    fn idf_is_reused_for_queries() {
        let m = TfidfEmbedder::fit(&["x y", "x z"], 128).unwrap();
        let tag = m.tag();
        let q = m.embed("x unseen");
        assert!((q.norm() - 1.0).abs() < NORM_TOLERANCE);
        assert_eq!(m.tag(), tag);
        assert_eq!(m.embed("   "), EmbeddingVector::basis(128, 0));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(TfidfEmbedder::fit::<&str>(&[], 8).is_err());
        assert!(tfidf_embed(&[], 8).is_err());
    }
}
