//! End-to-end runs: serialize, embed (with an on-disk cache), index, gather,
//! verify, and score against truth.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;
use twox_hash::XxHash64;

use crate::config::{IndexKind, PipelineConfig, ScoringMode};
use crate::embedding::{embed_batch, load_cache, save_cache, EmbedError, EmbeddingBatch, EmbeddingProvider};
use crate::eval::{decision_metrics, DecisionEvalResult};
use crate::ground_truth::{brute_force_pairs, BruteForcePairs, GroundTruthPair};
use crate::index::{batch_gather, CandidateSet, FlatIndex, NeighborIndex, RpForestIndex};
use crate::record::{serialize_all, Record, SerializedSentence};
use crate::verify::{accept_top1, ref_lookup, MatchDecision, Verifier};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: BoxError,
}

trait StageResult<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> StageResult<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

/// Wall time and counter totals of one stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLog {
    pub stage: &'static str,
    pub wall_ms: f64,
    pub counters: BTreeMap<&'static str, u64>,
}

/// Receives a [`StageLog`] as each stage finishes.
pub type StageSink<'a> = &'a mut dyn FnMut(StageLog);

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Self(Instant::now())
    }

    fn finish(self, sink: &mut dyn FnMut(StageLog), stage: &'static str, counters: &[(&'static str, u64)]) {
        sink(StageLog {
            stage,
            wall_ms: self.0.elapsed().as_secs_f64() * 1e3,
            counters: counters.iter().copied().collect(),
        });
    }
}

/// Cache file for a provider and an ordered sentence list.
pub fn cache_path(dir: &Path, role: &str, provider_tag: &str, sentences: &[SerializedSentence]) -> PathBuf {
    let mut h = XxHash64::with_seed(0);
    h.write(provider_tag.as_bytes());
    for s in sentences {
        h.write_u8(0);
        h.write(s.record_id.as_bytes());
        h.write_u8(0);
        h.write(s.text.as_bytes());
    }
    dir.join(format!("{role}-{:016x}.erhv", h.finish()))
}

/// Embeds `sentences`, reusing a cache file under `cache_dir` when one matches.
/// Returns the batch and whether it came from the cache.
pub fn embed_cached(
    provider: &dyn EmbeddingProvider,
    sentences: &[SerializedSentence],
    cache_dir: Option<&Path>,
    role: &str,
) -> Result<(EmbeddingBatch, bool), EmbedError> {
    let Some(dir) = cache_dir else {
        return Ok((embed_batch(provider, sentences)?, false));
    };
    let path = cache_path(dir, role, &provider.tag(), sentences);
    if path.exists() {
        let batch = load_cache(&path)?;
        let same_ids = batch.ids().iter().eq(sentences.iter().map(|s| &s.record_id));
        if same_ids && (provider.dim() == 0 || provider.dim() == batch.dim()) {
            return Ok((batch, true));
        }
    }
    let batch = embed_batch(provider, sentences)?;
    std::fs::create_dir_all(dir)?;
    save_cache(&batch, &path)?;
    Ok((batch, false))
}

/// Embeds references and queries with the configured provider.
pub fn embed_both(
    cfg: &PipelineConfig,
    refs: &[Record],
    queries: &[Record],
    sink: StageSink<'_>,
) -> Result<(EmbeddingBatch, Option<EmbeddingBatch>), PipelineError> {
    let t = Timer::start();
    let ref_sentences = serialize_all(refs);
    let query_sentences = serialize_all(queries);
    t.finish(sink, "serialize", &[("sentences", (ref_sentences.len() + query_sentences.len()) as u64)]);

    let t = Timer::start();
    let provider = cfg.embedder(&ref_sentences).stage("embed")?;
    let cache = cfg.paths.cache_dir.as_deref();
    let (ref_batch, ref_hit) = embed_cached(provider.as_ref(), &ref_sentences, cache, "refs").stage("embed")?;
    let query_batch = if query_sentences.is_empty() {
        None
    } else {
        Some(embed_cached(provider.as_ref(), &query_sentences, cache, "queries").stage("embed")?)
    };
    let hits = u64::from(ref_hit) + u64::from(query_batch.as_ref().is_some_and(|q| q.1));
    t.finish(
        sink,
        "embed",
        &[
            ("vectors", (ref_sentences.len() + query_sentences.len()) as u64),
            ("cache_hits", hits),
            ("dim", ref_batch.dim() as u64),
        ],
    );
    Ok((ref_batch, query_batch.map(|q| q.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolveOutcome {
    pub candidates: Vec<CandidateSet>,
    /// One per query, in query order.
    pub decisions: Vec<MatchDecision>,
    pub metrics: Option<DecisionEvalResult>,
    pub index_comparisons: u64,
    pub verifications: u64,
}

/// Resolves every query against the references.
pub fn resolve(
    cfg: &PipelineConfig,
    refs: &[Record],
    queries: &[Record],
    truth: Option<&[GroundTruthPair]>,
    sink: StageSink<'_>,
) -> Result<ResolveOutcome, PipelineError> {
    cfg.validate().stage("config")?;
    let weights = cfg.weights().stage("config")?;
    let (ref_batch, query_batch) = embed_both(cfg, refs, queries, sink)?;

    let t = Timer::start();
    let k = cfg.retrieval.k;
    let (candidates, index_comparisons) = match cfg.retrieval.index {
        IndexKind::Flat => {
            let index = FlatIndex::build(&ref_batch).stage("index")?;
            t.finish(sink, "index", &[("rows", index.len() as u64)]);
            gather(&index, query_batch.as_ref(), k, sink)?
        }
        IndexKind::Rpforest => {
            let index = RpForestIndex::build(&ref_batch, cfg.forest_params()).stage("index")?;
            t.finish(sink, "index", &[("rows", index.len() as u64), ("trees", cfg.retrieval.n_trees as u64)]);
            let budget = cfg
                .retrieval
                .search_budget
                .unwrap_or_else(|| cfg.forest_params().default_budget(k));
            gather(&index.searcher(budget), query_batch.as_ref(), k, sink)?
        }
    };

    let t = Timer::start();
    let verifier = Verifier::new(weights, cfg.scoring.accept_threshold).stage("verify")?;
    let decisions: Vec<MatchDecision> = match cfg.scoring.mode {
        ScoringMode::Fuzzy => {
            let lookup = ref_lookup(refs);
            queries
                .par_iter()
                .zip(candidates.par_iter())
                .map(|(q, c)| verifier.reconsider(q, c, &lookup))
                .collect::<Result<_, _>>()
                .stage("verify")?
        }
        ScoringMode::EmbeddingOnly => candidates.iter().map(accept_top1).collect(),
    };
    let accepted = decisions.iter().filter(|d| d.accepted).count() as u64;
    t.finish(
        sink,
        "verify",
        &[("verifications", verifier.verifications()), ("accepted", accepted)],
    );

    let metrics = match truth {
        Some(truth) => {
            let t = Timer::start();
            let m = decision_metrics(&decisions, truth).stage("evaluate")?;
            t.finish(sink, "evaluate", &[("tp", m.tp), ("fp", m.fp), ("fn", m.fn_), ("tn", m.tn)]);
            Some(m)
        }
        None => None,
    };

    Ok(ResolveOutcome {
        candidates,
        decisions,
        metrics,
        index_comparisons,
        verifications: verifier.verifications(),
    })
}

fn gather(
    index: &dyn NeighborIndex,
    queries: Option<&EmbeddingBatch>,
    k: usize,
    sink: StageSink<'_>,
) -> Result<(Vec<CandidateSet>, u64), PipelineError> {
    let t = Timer::start();
    let before = index.comparisons();
    let sets = match queries {
        Some(q) => batch_gather(index, q, k).stage("gather")?,
        None => Vec::new(),
    };
    let comparisons = index.comparisons() - before;
    t.finish(sink, "gather", &[("queries", sets.len() as u64), ("comparisons", comparisons)]);
    Ok((sets, comparisons))
}

/// Exhaustive argmax-above-threshold links between queries and references.
pub fn ground_truth(
    cfg: &PipelineConfig,
    refs: &[Record],
    queries: &[Record],
    sink: StageSink<'_>,
) -> Result<BruteForcePairs, PipelineError> {
    cfg.validate().stage("config")?;
    let (ref_batch, query_batch) = embed_both(cfg, refs, queries, sink)?;
    let Some(query_batch) = query_batch else {
        return Ok(BruteForcePairs {
            pairs: Vec::new(),
            comparisons: 0,
        });
    };
    let t = Timer::start();
    let out = brute_force_pairs(&query_batch, &ref_batch, cfg.scoring.ground_truth_threshold).stage("ground-truth")?;
    t.finish(
        sink,
        "ground-truth",
        &[("comparisons", out.comparisons), ("pairs", out.pairs.len() as u64)],
    );
    Ok(out)
}

/// One JSON object per line, in decision order.
pub fn write_decisions_jsonl<W: Write>(mut out: W, decisions: &[MatchDecision]) -> std::io::Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
