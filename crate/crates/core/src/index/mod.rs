//! Candidate gathering: exact top-k scan and a random-projection forest.
//!
//! Both indexes store their rows sorted by record id, so the tie-break on equal
//! similarity (ascending ref id) is the same as ascending row number.

mod flat;
mod forest;
mod persist;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::{EmbedError, EmbeddingBatch};

pub use flat::FlatIndex;
pub use forest::{ForestParams, ForestSearcher, RpForestIndex};

/// Default number of candidates gathered per query.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: index has {expected}, query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Storage(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub ref_id: String,
    pub similarity: f32,
}

/// Ranked neighbors of one query: similarity descending, ties by ascending ref id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

impl CandidateSet {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            neighbors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn top(&self, k: usize) -> &[Neighbor] {
        &self.neighbors[..k.min(self.neighbors.len())]
    }
}

/// Dot product; on unit-norm rows this is the cosine similarity.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    lo + hi + tail
}

/// Anything that can answer a top-k similarity query over reference rows.
pub trait NeighborIndex: Sync {
    fn dim(&self) -> usize;

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError>;

    /// Similarity evaluations performed so far.
    fn comparisons(&self) -> u64;
}

/// Gathers candidates for every query row, in parallel, preserving query order.
pub fn batch_gather<I: NeighborIndex + ?Sized>(
    index: &I,
    queries: &EmbeddingBatch,
    k: usize,
) -> Result<Vec<CandidateSet>, IndexError> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    check_dim(index.dim(), queries.dim())?;
    queries
        .rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(id, row)| {
            Ok(CandidateSet {
                query_id: id.to_owned(),
                neighbors: index.search(row, k)?,
            })
        })
        .collect()
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<(), IndexError> {
    if expected != actual {
        return Err(IndexError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Heap entry ordered so that the *worst* candidate is the maximum.
#[derive(Debug, Clone, Copy)]
struct Scored {
    sim: f32,
    row: u32,
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        other.sim.total_cmp(&self.sim).then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

/// Bounded selection of the best `k` rows.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Scored>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, sim: f32, row: u32) {
        let s = Scored { sim, row };
        if self.heap.len() < self.k {
            self.heap.push(s);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if s < *worst {
                *worst = s;
            }
        }
    }

    pub(crate) fn into_neighbors(self, ids: &[String]) -> Vec<Neighbor> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|s| Neighbor {
                ref_id: ids[s.row as usize].clone(),
                similarity: s.sim,
            })
            .collect()
    }
}

/// Rows of `batch` re-ordered by ascending id.
pub(crate) fn sorted_rows(batch: &EmbeddingBatch) -> (Vec<String>, Vec<f32>) {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| batch.ids()[a].cmp(&batch.ids()[b]));
    let ids = order.iter().map(|&i| batch.ids()[i].clone()).collect();
    let mut data = Vec::with_capacity(batch.len() * batch.dim());
    for &i in &order {
        data.extend_from_slice(batch.row(i));
    }
    (ids, data)
}
