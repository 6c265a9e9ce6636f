//! Random-projection forest for approximate top-k search.
//!
//! Each tree splits a node's rows at the median of their projections onto a
//! random direction (the normalized difference of two sampled rows), until
//! leaves hold at most `leaf_size` rows. Tree `t` draws from its own ChaCha
//! stream, so a forest of `T + 1` trees contains the forest of `T` trees.
//!
//! A query first takes the leaf its own projection lands in for every tree, in
//! tree order, then backtracks across all trees through the sibling subtrees
//! closest to their splitting hyperplane, until `search_budget` distinct rows
//! have been collected. The pool is scored exactly.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{check_dim, dot, sorted_rows, IndexError, Neighbor, NeighborIndex, TopK};
use crate::embedding::EmbeddingBatch;

pub(super) const LEAF_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 16,
            leaf_size: 50,
            seed: 42,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<(), IndexError> {
        if self.n_trees == 0 {
            return Err(IndexError::InvalidParameter("n_trees must be at least 1".into()));
        }
        if !(2..=u16::MAX as usize).contains(&self.leaf_size) {
            return Err(IndexError::InvalidParameter(format!(
                "leaf_size must be within 2..=65535, got {}",
                self.leaf_size
            )));
        }
        Ok(())
    }

    /// `max(10 k, n_trees * leaf_size)`.
    pub fn default_budget(&self, k: usize) -> usize {
        (10 * k).max(self.n_trees * self.leaf_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Node {
    Split {
        direction: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        rows: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Tree {
    /// Root is node 0.
    pub(super) nodes: Vec<Node>,
}

#[derive(Debug)]
pub struct RpForestIndex {
    pub(super) ids: Vec<String>,
    pub(super) dim: usize,
    pub(super) data: Vec<f32>,
    pub(super) provider_tag: String,
    pub(super) params: ForestParams,
    pub(super) trees: Vec<Tree>,
    pub(super) comparisons: AtomicU64,
}

impl RpForestIndex {
    pub fn build(batch: &EmbeddingBatch, params: ForestParams) -> Result<Self, IndexError> {
        params.validate()?;
        if batch.is_empty() {
            return Err(IndexError::EmptyBatch);
        }
        let (ids, data) = sorted_rows(batch);
        let dim = batch.dim();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| build_tree(&data, dim, params.leaf_size, params.seed, t as u64))
            .collect();
        Ok(Self {
            ids,
            dim,
            data,
            provider_tag: batch.provider_tag().to_owned(),
            params,
            trees,
            comparisons: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> ForestParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    /// Depth of the deepest leaf of each tree (a lone root leaf has depth 0).
    pub fn tree_depths(&self) -> Vec<usize> {
        self.trees.iter().map(tree_depth).collect()
    }

    /// Row sets of every leaf, per tree.
    pub fn leaves(&self) -> Vec<Vec<Vec<&str>>> {
        self.trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .filter_map(|n| match n {
                        Node::Leaf { rows } => Some(rows.iter().map(|&r| self.ids[r as usize].as_str()).collect()),
                        Node::Split { .. } => None,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn searcher(&self, search_budget: usize) -> ForestSearcher<'_> {
        ForestSearcher {
            index: self,
            search_budget,
        }
    }

    pub fn query_rpforest(&self, query: &[f32], k: usize, search_budget: usize) -> Result<Vec<Neighbor>, IndexError> {
        check_dim(self.dim, query.len())?;
        if k == 0 {
            return Err(IndexError::InvalidParameter("k must be at least 1".into()));
        }
        if search_budget < k {
            return Err(IndexError::InvalidParameter(format!(
                "search budget {search_budget} is smaller than k = {k}"
            )));
        }
        let pool = self.candidate_pool(query, search_budget);
        let mut top = TopK::new(k);
        for &row in &pool {
            top.push(dot(query, self.row(row)), row);
        }
        self.comparisons.fetch_add(pool.len() as u64, Ordering::Relaxed);
        Ok(top.into_neighbors(&self.ids))
    }

    pub fn reset_comparisons(&self) {
        self.comparisons.store(0, Ordering::Relaxed);
    }

    fn row(&self, row: u32) -> &[f32] {
        let start = row as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    fn candidate_pool(&self, query: &[f32], budget: usize) -> Vec<u32> {
        let budget = budget.min(self.ids.len());
        let mut seen = HashSet::with_capacity(budget);
        let mut pool = Vec::with_capacity(budget);
        let mut take_leaf = |rows: &[u32], pool: &mut Vec<u32>| {
            for &r in rows {
                if pool.len() >= budget {
                    break;
                }
                if seen.insert(r) {
                    pool.push(r);
                }
            }
        };

        // Pass 1: the query's own leaf in each tree; remember the skipped siblings.
        let mut frontier = BinaryHeap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            if pool.len() >= budget {
                break;
            }
            let mut node = 0u32;
            let mut priority = f32::INFINITY;
            loop {
                match &tree.nodes[node as usize] {
                    Node::Leaf { rows } => {
                        take_leaf(rows, &mut pool);
                        break;
                    }
                    Node::Split {
                        direction,
                        offset,
                        left,
                        right,
                    } => {
                        let margin = dot(query, direction) - offset;
                        let (near, far) = if margin <= 0.0 { (*left, *right) } else { (*right, *left) };
                        frontier.push(Pending {
                            priority: priority.min(-margin.abs()),
                            tree: t as u32,
                            node: far,
                        });
                        priority = priority.min(margin.abs());
                        node = near;
                    }
                }
            }
        }

        // Pass 2: best-first backtracking by hyperplane margin.
        while pool.len() < budget {
            let Some(p) = frontier.pop() else { break };
            match &self.trees[p.tree as usize].nodes[p.node as usize] {
                Node::Leaf { rows } => take_leaf(rows, &mut pool),
                Node::Split {
                    direction,
                    offset,
                    left,
                    right,
                } => {
                    let margin = dot(query, direction) - offset;
                    let (near, far) = if margin <= 0.0 { (*left, *right) } else { (*right, *left) };
                    frontier.push(Pending {
                        priority: p.priority.min(margin.abs()),
                        tree: p.tree,
                        node: near,
                    });
                    frontier.push(Pending {
                        priority: p.priority.min(-margin.abs()),
                        tree: p.tree,
                        node: far,
                    });
                }
            }
        }
        pool
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    priority: f32,
    tree: u32,
    node: u32,
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}

impl Eq for Pending {}

impl NeighborIndex for RpForestIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Searches with the default budget for `k`.
    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.query_rpforest(query, k, self.params.default_budget(k))
    }

    fn comparisons(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }
}

/// A forest paired with a fixed search budget.
#[derive(Debug, Clone, Copy)]
pub struct ForestSearcher<'a> {
    index: &'a RpForestIndex,
    search_budget: usize,
}

impl NeighborIndex for ForestSearcher<'_> {
    fn dim(&self) -> usize {
        self.index.dim
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, IndexError> {
        self.index.query_rpforest(query, k, self.search_budget.max(k))
    }

    fn comparisons(&self) -> u64 {
        self.index.comparisons()
    }
}

fn build_tree(data: &[f32], dim: usize, leaf_size: usize, seed: u64, tree: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    let m = data.len() / dim;
    let row = |r: u32| &data[r as usize * dim..(r as usize + 1) * dim];

    let mut nodes = vec![Node::Leaf { rows: Vec::new() }];
    let mut stack = vec![(0usize, (0..m as u32).collect::<Vec<u32>>())];
    while let Some((slot, rows)) = stack.pop() {
        if rows.len() <= leaf_size {
            nodes[slot] = Node::Leaf { rows };
            continue;
        }
        let direction = split_direction(&rows, dim, row, &mut rng);
        let mut projected: Vec<(f32, u32)> = rows.iter().map(|&r| (dot(row(r), &direction), r)).collect();
        projected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mid = projected.len() / 2;
        let offset = 0.5 * (projected[mid - 1].0 + projected[mid].0);
        let left_rows: Vec<u32> = projected[..mid].iter().map(|p| p.1).collect();
        let right_rows: Vec<u32> = projected[mid..].iter().map(|p| p.1).collect();

        let left = nodes.len() as u32;
        nodes.push(Node::Leaf { rows: Vec::new() });
        let right = nodes.len() as u32;
        nodes.push(Node::Leaf { rows: Vec::new() });
        nodes[slot] = Node::Split {
            direction,
            offset,
            left,
            right,
        };
        stack.push((right as usize, right_rows));
        stack.push((left as usize, left_rows));
    }
    Tree { nodes }
}

fn split_direction<'d>(
    rows: &[u32],
    dim: usize,
    row: impl Fn(u32) -> &'d [f32],
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    for _ in 0..4 {
        let a = rows[rng.gen_range(0..rows.len())];
        let b = rows[rng.gen_range(0..rows.len())];
        if a == b {
            continue;
        }
        let diff: Vec<f32> = row(a).iter().zip(row(b)).map(|(x, y)| x - y).collect();
        if let Some(unit) = unit(diff) {
            return unit;
        }
    }
    // Sampled rows coincide; fall back to an isotropic direction.
    loop {
        let g: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(unit) = unit(g) {
            return unit;
        }
    }
}

fn unit(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
    Some(v)
}

fn tree_depth(tree: &Tree) -> usize {
    let mut max = 0;
    let mut stack = vec![(0u32, 0usize)];
    while let Some((n, d)) = stack.pop() {
        match &tree.nodes[n as usize] {
            Node::Leaf { .. } => max = max.max(d),
            Node::Split { left, right, .. } => {
                stack.push((*left, d + 1));
                stack.push((*right, d + 1));
            }
        }
    }
    max
}
