//! Client for an external embedding service.
//!
//! Wire protocol: `POST {endpoint}/embed` with `{"texts": [...], "normalize": true}`,
//! answered by `{"embeddings": [[...]...], "dim": n, "model": "..."}`.
//! `GET {endpoint}/healthz` answers `{"status": "ok", "dim": n}`, or 503 while loading.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingBatch, EmbeddingProvider, EmbeddingVector};
use crate::record::SerializedSentence;

/// Largest number of texts sent in one request.
pub const MAX_REMOTE_CHUNK: usize = 256;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    normalize: bool,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
    dim: usize,
    model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    /// Expected dimension; `None` accepts whatever the first response reports.
    dim: Option<usize>,
    parallelism: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            agent,
            dim: None,
            parallelism: 1,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    /// Number of chunk requests allowed in flight at once.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthStatus, EmbedError> {
        let url = format!("{}/healthz", self.endpoint);
        let mut resp = self.agent.get(&url).call().map_err(transport)?;
        match resp.status().as_u16() {
            200 => resp
                .body_mut()
                .read_json()
                .map_err(|e| EmbedError::ProtocolError(format!("bad /healthz body: {e}"))),
            503 => Err(EmbedError::ProviderUnavailable("service is loading its model".into())),
            code => Err(EmbedError::ProtocolError(format!("/healthz returned HTTP {code}"))),
        }
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<(usize, Vec<Vec<f32>>), EmbedError> {
        let url = format!("{}/embed", self.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(EmbedRequest {
                texts,
                normalize: true,
            })
            .map_err(transport)?;
        match resp.status().as_u16() {
            200 => {}
            503 => return Err(EmbedError::ProviderUnavailable("service is loading its model".into())),
            400 => return Err(EmbedError::ProtocolError("service rejected the request (HTTP 400)".into())),
            code => return Err(EmbedError::ProtocolError(format!("/embed returned HTTP {code}"))),
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::ProtocolError(format!("bad /embed body: {e}")))?;
        if body.embeddings.len() != texts.len() {
            return Err(EmbedError::ProtocolError(format!(
                "{} embeddings for {} texts (model {})",
                body.embeddings.len(),
                texts.len(),
                body.model
            )));
        }
        if let Some(bad) = body.embeddings.iter().find(|v| v.len() != body.dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: body.dim,
                actual: bad.len(),
            });
        }
        Ok((body.dim, body.embeddings))
    }

    /// Embeds texts in chunks of at most [`MAX_REMOTE_CHUNK`], re-normalizing locally.
    /// Returns the dimension reported by the service.
    fn embed_all(&self, texts: &[&str]) -> Result<(usize, Vec<EmbeddingVector>), EmbedError> {
        let chunks: Vec<&[&str]> = texts.chunks(MAX_REMOTE_CHUNK).collect();
        let mut results = Vec::with_capacity(chunks.len());
        for wave in chunks.chunks(self.parallelism) {
            let wave_results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|c| s.spawn(move || self.embed_chunk(c))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding request thread panicked"))
                    .collect()
            });
            results.extend(wave_results);
        }

        let mut dim = self.dim;
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            let (chunk_dim, vectors) = r?;
            match dim {
                Some(d) if d != chunk_dim => {
                    return Err(EmbedError::DimensionMismatch {
                        expected: d,
                        actual: chunk_dim,
                    })
                }
                _ => dim = Some(chunk_dim),
            }
            if chunk_dim == 0 {
                return Err(EmbedError::ProtocolError("service reported dim 0".into()));
            }
            out.extend(vectors.into_iter().map(EmbeddingVector::normalized));
        }
        Ok((dim.unwrap_or(0), out))
    }

    fn tag_for(&self, dim: usize) -> String {
        format!("remote(endpoint={},dim={dim})", self.endpoint)
    }
}

fn transport(e: ureq::Error) -> EmbedError {
    match e {
        ureq::Error::Json(e) => EmbedError::ProtocolError(e.to_string()),
        other => EmbedError::ProviderUnavailable(other.to_string()),
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    /// The configured dimension, or 0 when it will be learned from the service.
    fn dim(&self) -> usize {
        self.dim.unwrap_or(0)
    }

    fn tag(&self) -> String {
        self.tag_for(self.dim())
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(self.embed_all(texts)?.1)
    }
}

/// One-shot remote embedding whose dimension is taken from the service.
pub fn remote_embed(
    endpoint: &str,
    sentences: &[SerializedSentence],
    timeout: Duration,
) -> Result<EmbeddingBatch, EmbedError> {
    if sentences.is_empty() {
        return Err(EmbedError::InvalidBatch("no sentences to embed".into()));
    }
    let client = RemoteEmbedder::new(endpoint, timeout);
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let (dim, vectors) = client.embed_all(&texts)?;
    let ids = sentences.iter().map(|s| s.record_id.clone()).collect();
    EmbeddingBatch::from_vectors(ids, vectors, dim, client.tag_for(dim))
}
