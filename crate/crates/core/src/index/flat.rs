use std::sync::atomic::{AtomicU64, Ordering};

use super::{check_dim, dot, sorted_rows, IndexError, Neighbor, NeighborIndex, TopK};
use crate::embedding::EmbeddingBatch;

/// Exact top-k by full scan with a bounded heap.
#[derive(Debug)]
pub struct FlatIndex {
    pub(super) ids: Vec<String>,
    pub(super) dim: usize,
    pub(super) data: Vec<f32>,
    pub(super) provider_tag: String,
    pub(super) comparisons: AtomicU64,
}

impl FlatIndex {
    pub fn build(batch: &EmbeddingBatch) -> Result<Self, IndexError> {
        if batch.is_empty() {
            return Err(IndexError::EmptyBatch);
        }
        let (ids, data) = sorted_rows(batch);
        Ok(Self {
            ids,
            dim: batch.dim(),
            data,
            provider_tag: batch.provider_tag().to_owned(),
            comparisons: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Reference ids in ascending order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    /// Exactly `min(k, m)` neighbors; always scores all `m` rows.
    pub fn query_topk(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        check_dim(self.dim, query.len())?;
        if k == 0 {
            return Err(IndexError::InvalidParameter("k must be at least 1".into()));
        }
        let mut top = TopK::new(k);
        for (row, v) in self.data.chunks_exact(self.dim).enumerate() {
            top.push(dot(query, v), row as u32);
        }
        self.comparisons.fetch_add(self.ids.len() as u64, Ordering::Relaxed);
        Ok(top.into_neighbors(&self.ids))
    }

    pub fn reset_comparisons(&self) {
        self.comparisons.store(0, Ordering::Relaxed);
    }
}

impl NeighborIndex for FlatIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.query_topk(query, k)
    }

    fn comparisons(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }
}
