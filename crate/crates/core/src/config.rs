//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingProvider, HashNgramEmbedder, RemoteEmbedder, TfidfEmbedder, DEFAULT_DIM};
use crate::ground_truth::{CorpusSpec, NoiseSpec, DEFAULT_TRUTH_THRESHOLD};
use crate::index::{ForestParams, DEFAULT_K};
use crate::record::{Field, SerializedSentence};
use crate::verify::{FieldWeights, DEFAULT_ACCEPT_THRESHOLD};

/// Overrides `embedder.endpoint` when set.
pub const ENDPOINT_ENV: &str = "ER_EMBED_ENDPOINT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    HashNgram,
    Tfidf,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub ngram: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::HashNgram,
            dim: DEFAULT_DIM,
            ngram: 3,
            seed: 42,
            endpoint: None,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Flat,
    Rpforest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub index: IndexKind,
    pub n_trees: usize,
    pub leaf_size: usize,
    /// Defaults to `max(10 k, n_trees * leaf_size)`.
    pub search_budget: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let forest = ForestParams::default();
        Self {
            k: DEFAULT_K,
            index: IndexKind::Flat,
            n_trees: forest.n_trees,
            leaf_size: forest.leaf_size,
            search_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Verify candidates with the composite string score.
    Fuzzy,
    /// Accept the top retrieved candidate unconditionally.
    EmbeddingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub email: f64,
    pub username: f64,
    pub domain: f64,
    pub servername: f64,
    pub status: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let w = FieldWeights::default();
        Self {
            email: w.weight(Field::Email),
            username: w.weight(Field::Username),
            domain: w.weight(Field::Domain),
            servername: w.weight(Field::Servername),
            status: w.weight(Field::Status),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub mode: ScoringMode,
    pub accept_threshold: f64,
    pub ground_truth_threshold: f64,
    pub weights: WeightsConfig,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Fuzzy,
            accept_threshold: DEFAULT_ACCEPT_THRESHOLD,
            ground_truth_threshold: DEFAULT_TRUTH_THRESHOLD,
            weights: WeightsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub refs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub m: usize,
    pub n: usize,
    pub distractor_rate: f64,
    pub typo_rate: f64,
    pub field_drop_rate: f64,
    pub case_flip_rate: f64,
    pub swap_adjacent_rate: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            n: 500,
            distractor_rate: 0.0,
            typo_rate: 0.0,
            field_drop_rate: 0.0,
            case_flip_rate: 0.0,
            swap_adjacent_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub embedder: EmbedderConfig,
    pub retrieval: RetrievalConfig,
    pub scoring: ScoringConfig,
    pub paths: PathsConfig,
    pub generate: GenerateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            embedder: EmbedderConfig::default(),
            retrieval: RetrievalConfig::default(),
            scoring: ScoringConfig::default(),
            paths: PathsConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies environment overrides.
    pub fn apply_env(&mut self) {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.trim().is_empty() {
                self.embedder.endpoint = Some(endpoint);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.embedder.dim == 0 {
            return Err(invalid("embedder.dim", "must be at least 1"));
        }
        if self.embedder.ngram == 0 {
            return Err(invalid("embedder.ngram", "must be at least 1"));
        }
        if self.embedder.timeout_secs == 0 {
            return Err(invalid("embedder.timeout_secs", "must be at least 1"));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.endpoint.is_none() {
            return Err(invalid(
                "embedder.endpoint",
                format!("required for the remote embedder (or set {ENDPOINT_ENV})"),
            ));
        }
        if self.retrieval.k == 0 {
            return Err(invalid("retrieval.k", "must be at least 1"));
        }
        if self.retrieval.n_trees == 0 {
            return Err(invalid("retrieval.n_trees", "must be at least 1"));
        }
        if !(2..=u16::MAX as usize).contains(&self.retrieval.leaf_size) {
            return Err(invalid("retrieval.leaf_size", "must be within 2..=65535"));
        }
        if let Some(b) = self.retrieval.search_budget {
            if b < self.retrieval.k {
                return Err(invalid("retrieval.search_budget", format!("{b} is below retrieval.k")));
            }
        }
        for (key, v) in [
            ("scoring.accept_threshold", self.scoring.accept_threshold),
            ("scoring.ground_truth_threshold", self.scoring.ground_truth_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(key, format!("{v} is outside [0, 1]")));
            }
        }
        self.weights()?;
        self.corpus_spec()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<FieldWeights, ConfigError> {
        let w = &self.scoring.weights;
        FieldWeights::new(vec![
            (Field::Email, w.email),
            (Field::Username, w.username),
            (Field::Domain, w.domain),
            (Field::Servername, w.servername),
            (Field::Status, w.status),
        ])
        .map_err(|e| invalid("scoring.weights", e.to_string()))
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.retrieval.n_trees,
            leaf_size: self.retrieval.leaf_size,
            seed: self.seed,
        }
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec, ConfigError> {
        let g = &self.generate;
        let spec = CorpusSpec {
            m: g.m,
            n: g.n,
            distractor_rate: g.distractor_rate,
            noise: NoiseSpec {
                typo_rate: g.typo_rate,
                field_drop_rate: g.field_drop_rate,
                case_flip_rate: g.case_flip_rate,
                swap_adjacent_rate: g.swap_adjacent_rate,
                seed: self.seed,
            },
        };
        spec.validate().map_err(|e| invalid("generate", e.to_string()))?;
        Ok(spec)
    }

    /// Builds the configured embedder. TF-IDF fits its vocabulary on `reference_corpus`.
    pub fn embedder(
        &self,
        reference_corpus: &[SerializedSentence],
    ) -> Result<Box<dyn EmbeddingProvider>, crate::embedding::EmbedError> {
        let e = &self.embedder;
        Ok(match e.kind {
            EmbedderKind::HashNgram => Box::new(HashNgramEmbedder::new(e.dim, e.ngram, e.seed)?),
            EmbedderKind::Tfidf => Box::new(TfidfEmbedder::fit_sentences(reference_corpus, e.dim)?),
            EmbedderKind::Remote => {
                let endpoint = e.endpoint.clone().unwrap_or_default();
                Box::new(RemoteEmbedder::new(endpoint, Duration::from_secs(e.timeout_secs)).with_dim(e.dim))
            }
        })
    }
}
