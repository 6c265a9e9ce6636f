//! Retrieval recall, decision quality, and timed method comparisons.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_batch, EmbedError, EmbeddingProvider, TfidfEmbedder};
use crate::ground_truth::GroundTruthPair;
use crate::index::{batch_gather, CandidateSet, FlatIndex, ForestParams, IndexError, Neighbor, NeighborIndex, RpForestIndex};
use crate::record::{serialize_all, Record};
use crate::verify::{FieldWeights, MatchDecision, Verifier};

/// Minimum timed repetitions per method.
pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no candidate set for truth query {0}")]
    MissingQuery(String),
    #[error("duplicate decision for query {0}")]
    DuplicateQuery(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("the brute-force baseline must be among the benchmarked methods")]
    MissingBaseline,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fraction of truth pairs whose reference appears in the query's top `k` candidates.
pub fn recall_at_k(candidates: &[CandidateSet], truth: &[GroundTruthPair], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidParameter("k must be at least 1".into()));
    }
    let by_query: HashMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.query_id.as_str(), c)).collect();
    let mut hits = 0usize;
    for pair in truth {
        let set = by_query
            .get(pair.query_id.as_str())
            .ok_or_else(|| EvalError::MissingQuery(pair.query_id.clone()))?;
        if set.top(k).iter().any(|n| n.ref_id == pair.ref_id) {
            hits += 1;
        }
    }
    Ok(ratio(hits as u64, truth.len() as u64))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl DecisionEvalResult {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// Confusion counts of accepted links against the truth. A truth query with
/// no decision counts as a miss. An accepted wrong link is both a false
/// positive and a false negative.
pub fn decision_metrics(decisions: &[MatchDecision], truth: &[GroundTruthPair]) -> Result<DecisionEvalResult, EvalError> {
    let truth_of: HashMap<&str, &str> = truth.iter().map(|p| (p.query_id.as_str(), p.ref_id.as_str())).collect();
    let mut seen = HashSet::with_capacity(decisions.len());
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for d in decisions {
        if !seen.insert(d.query_id.as_str()) {
            return Err(EvalError::DuplicateQuery(d.query_id.clone()));
        }
        let expected = truth_of.get(d.query_id.as_str()).copied();
        let correct = expected.is_some() && d.best_ref_id.as_deref() == expected;
        match (d.accepted, expected.is_some()) {
            (true, _) if correct => tp += 1,
            (true, true) => {
                fp += 1;
                fn_ += 1;
            }
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    fn_ += truth_of.keys().filter(|q| !seen.contains(*q)).count() as u64;
    Ok(DecisionEvalResult::from_counts(tp, fp, fn_, tn))
}

/// A retrieval configuration compared by [`benchmark_methods`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalMethod {
    /// Composite string score against every reference.
    BruteForce,
    /// Exact embedding scan.
    Flat,
    /// Random-projection forest; `None` uses the default budget.
    RpForest {
        params: ForestParams,
        search_budget: Option<usize>,
    },
    /// Token TF-IDF vectors with an exact scan.
    Lexical { dim: usize },
}

impl RetrievalMethod {
    pub fn tag(&self) -> String {
        match self {
            Self::BruteForce => "brute_force".into(),
            Self::Flat => "flat".into(),
            Self::RpForest { params, search_budget } => match search_budget {
                Some(b) => format!("rpforest(trees={},leaf={},budget={b})", params.n_trees, params.leaf_size),
                None => format!("rpforest(trees={},leaf={})", params.n_trees, params.leaf_size),
            },
            Self::Lexical { .. } => "lexical".into(),
        }
    }
}

/// Records, queries and their truth links.
#[derive(Debug, Clone, Copy)]
pub struct EvalCorpus<'a> {
    pub refs: &'a [Record],
    pub queries: &'a [Record],
    pub truth: &'a [GroundTruthPair],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEvalResult {
    pub method_tag: String,
    /// `(k, recall@k)` in ascending `k`.
    pub per_k: Vec<(usize, f64)>,
    /// Similarity evaluations for one full run.
    pub comparisons_total: u64,
    pub wall_time: Duration,
    /// Brute-force time over this method's time; absent without a baseline.
    pub time_ratio: Option<f64>,
}

/// Runs `method` once from raw records to candidate sets of size `k`,
/// returning the candidates and the similarity evaluations spent.
pub fn run_retrieval(
    method: &RetrievalMethod,
    corpus: &EvalCorpus<'_>,
    embedder: &dyn EmbeddingProvider,
    weights: &FieldWeights,
    k: usize,
) -> Result<(Vec<CandidateSet>, u64), EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidParameter("k must be at least 1".into()));
    }
    let ref_sentences = serialize_all(corpus.refs);
    let query_sentences = serialize_all(corpus.queries);
    match method {
        RetrievalMethod::BruteForce => {
            let verifier = Verifier::new(weights.clone(), 0.0).expect("zero threshold is valid");
            let sets = corpus
                .queries
                .par_iter()
                .map(|q| brute_force_candidates(&verifier, q, corpus.refs, k))
                .collect();
            Ok((sets, verifier.verifications()))
        }
        RetrievalMethod::Flat => {
            let refs = embed_batch(embedder, &ref_sentences)?;
            let index = FlatIndex::build(&refs)?;
            gather(&index, embedder, &query_sentences, k)
        }
        RetrievalMethod::RpForest { params, search_budget } => {
            let refs = embed_batch(embedder, &ref_sentences)?;
            let index = RpForestIndex::build(&refs, *params)?;
            let budget = search_budget.unwrap_or_else(|| params.default_budget(k));
            gather(&index.searcher(budget), embedder, &query_sentences, k)
        }
        RetrievalMethod::Lexical { dim } => {
            let tfidf = TfidfEmbedder::fit_sentences(&ref_sentences, *dim)?;
            let refs = embed_batch(&tfidf, &ref_sentences)?;
            let index = FlatIndex::build(&refs)?;
            gather(&index, &tfidf, &query_sentences, k)
        }
    }
}

fn gather(
    index: &dyn NeighborIndex,
    embedder: &dyn EmbeddingProvider,
    queries: &[crate::record::SerializedSentence],
    k: usize,
) -> Result<(Vec<CandidateSet>, u64), EvalError> {
    if queries.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let before = index.comparisons();
    let batch = embed_batch(embedder, queries)?;
    let sets = batch_gather(index, &batch, k)?;
    Ok((sets, index.comparisons() - before))
}

fn brute_force_candidates(verifier: &Verifier, query: &Record, refs: &[Record], k: usize) -> CandidateSet {
    let mut scored: Vec<(f64, &str)> = refs.iter().map(|r| (verifier.score(query, r).score, r.id.as_str())).collect();
    let by_rank = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    CandidateSet {
        query_id: query.id.clone(),
        neighbors: scored
            .into_iter()
            .map(|(s, id)| Neighbor {
                ref_id: id.to_owned(),
                similarity: s as f32,
            })
            .collect(),
    }
}

/// Recall@k for every `k` in `k_list` from a single run at the largest `k`.
pub fn evaluate_retrieval(
    method: &RetrievalMethod,
    corpus: &EvalCorpus<'_>,
    embedder: &dyn EmbeddingProvider,
    weights: &FieldWeights,
    k_list: &[usize],
) -> Result<RetrievalEvalResult, EvalError> {
    let ks = sorted_ks(k_list)?;
    let start = Instant::now();
    let (sets, comparisons) = run_retrieval(method, corpus, embedder, weights, *ks.last().expect("non-empty"))?;
    let wall_time = start.elapsed();
    Ok(RetrievalEvalResult {
        method_tag: method.tag(),
        per_k: per_k(&sets, corpus.truth, &ks)?,
        comparisons_total: comparisons,
        wall_time,
        time_ratio: None,
    })
}

fn sorted_ks(k_list: &[usize]) -> Result<Vec<usize>, EvalError> {
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    match ks.first() {
        None => Err(EvalError::InvalidParameter("k list is empty".into())),
        Some(0) => Err(EvalError::InvalidParameter("k must be at least 1".into())),
        _ => Ok(ks),
    }
}

fn per_k(sets: &[CandidateSet], truth: &[GroundTruthPair], ks: &[usize]) -> Result<Vec<(usize, f64)>, EvalError> {
    ks.iter().map(|&k| Ok((k, recall_at_k(sets, truth, k)?))).collect()
}

/// Times each method (one warm-up, then the median of at least
/// [`MIN_REPETITIONS`] runs) and reports recall, comparisons and speed
/// relative to the brute-force baseline.
pub fn benchmark_methods(
    corpus: &EvalCorpus<'_>,
    methods: &[RetrievalMethod],
    embedder: &dyn EmbeddingProvider,
    weights: &FieldWeights,
    k_list: &[usize],
    repetitions: usize,
) -> Result<Vec<RetrievalEvalResult>, EvalError> {
    if !methods.contains(&RetrievalMethod::BruteForce) {
        return Err(EvalError::MissingBaseline);
    }
    let ks = sorted_ks(k_list)?;
    let k = *ks.last().expect("non-empty");
    let reps = repetitions.max(MIN_REPETITIONS);
    let mut results = Vec::with_capacity(methods.len());
    for method in methods {
        let (sets, comparisons) = run_retrieval(method, corpus, embedder, weights, k)?;
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            run_retrieval(method, corpus, embedder, weights, k)?;
            times.push(start.elapsed());
        }
        times.sort_unstable();
        results.push(RetrievalEvalResult {
            method_tag: method.tag(),
            per_k: per_k(&sets, corpus.truth, &ks)?,
            comparisons_total: comparisons,
            wall_time: times[reps / 2],
            time_ratio: None,
        });
    }
    let baseline_tag = RetrievalMethod::BruteForce.tag();
    let baseline = results
        .iter()
        .find(|r| r.method_tag == baseline_tag)
        .map(|r| r.wall_time.as_secs_f64())
        .expect("baseline present");
    for r in &mut results {
        r.time_ratio = Some(if r.method_tag == baseline_tag {
            1.0
        } else {
            baseline / r.wall_time.as_secs_f64().max(f64::MIN_POSITIVE)
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

/// One line of a retrieval report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub k: usize,
    pub recall: f64,
    pub comparisons: u64,
    pub wall_ms: f64,
    pub time_ratio: Option<f64>,
}

pub fn report_rows(results: &[RetrievalEvalResult]) -> Vec<ReportRow> {
    results
        .iter()
        .flat_map(|r| {
            r.per_k.iter().map(move |&(k, recall)| ReportRow {
                method: r.method_tag.clone(),
                k,
                recall,
                comparisons: r.comparisons_total,
                wall_ms: r.wall_time.as_secs_f64() * 1e3,
                time_ratio: r.time_ratio,
            })
        })
        .collect()
}

/// Writes one row per `(method, k)`; CSV output always carries its header.
pub fn write_report<W: Write>(out: W, results: &[RetrievalEvalResult], format: ReportFormat) -> Result<(), EvalError> {
    let rows = report_rows(results);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(["method", "k", "recall", "comparisons", "wall_ms", "time_ratio"])?;
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        ReportFormat::Jsonl => {
            let mut out = out;
            for row in &rows {
                serde_json::to_writer(&mut out, row)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(results: &[RetrievalEvalResult], path: impl AsRef<Path>, format: ReportFormat) -> Result<(), EvalError> {
    let file = File::create(path)?;
    write_report(BufWriter::new(file), results, format)
}

pub fn read_report<R: Read>(input: R, format: ReportFormat) -> Result<Vec<ReportRow>, EvalError> {
    match format {
        ReportFormat::Csv => Ok(csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>()?),
        ReportFormat::Jsonl => {
            let mut text = String::new();
            let mut input = input;
            input.read_to_string(&mut text)?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| Ok(serde_json::from_str(l)?))
                .collect()
        }
    }
}
