//! On-disk indexes, built on the embedding cache container.
//!
//! `ERIX1` (flat) is the bare container. `ERRF1` (forest) appends, before the
//! checksum: `n_trees u32, leaf_size u32, seed u64`, then per tree a node count
//! `u32` followed by each node as `direction f32 x dim, offset f32, left u32,
//! right u32`. Leaves carry `0xFFFFFFFF` in both child slots and a zero
//! direction, and are followed by a `u16` row count and that many `u32` row
//! numbers into the (id-sorted) entry table.

use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicU64;

use super::forest::{Node, Tree, LEAF_SENTINEL};
use super::{FlatIndex, ForestParams, IndexError, RpForestIndex};
use crate::embedding::{decode_container, encode_container, ByteReader, EmbedError, EmbeddingBatch};

pub const FLAT_MAGIC: &[u8; 5] = b"ERIX1";
pub const FOREST_MAGIC: &[u8; 5] = b"ERRF1";

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::Storage(EmbedError::CorruptCache(msg.into()))
}

impl FlatIndex {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let batch = EmbeddingBatch::new(self.ids.clone(), self.dim, self.data.clone(), self.provider_tag.clone())?;
        let bytes = encode_container(FLAT_MAGIC, &batch, |_| Ok(()))?;
        fs::write(path, bytes).map_err(EmbedError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(EmbedError::from)?;
        let (batch, rest) = decode_container(FLAT_MAGIC, &bytes)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after flat index"));
        }
        if batch.is_empty() {
            return Err(IndexError::EmptyBatch);
        }
        // Saved rows are already id-sorted; keep them verbatim.
        let (ids, dim, data, provider_tag) = batch.into_parts();
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(corrupt("flat index rows are not sorted by id"));
        }
        Ok(Self {
            ids,
            dim,
            data,
            provider_tag,
            comparisons: AtomicU64::new(0),
        })
    }
}

impl RpForestIndex {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let batch = EmbeddingBatch::new(self.ids.clone(), self.dim, self.data.clone(), self.provider_tag.clone())?;
        let dim = self.dim;
        let bytes = encode_container(FOREST_MAGIC, &batch, |out| {
            out.extend_from_slice(&(self.params.n_trees as u32).to_le_bytes());
            out.extend_from_slice(&(self.params.leaf_size as u32).to_le_bytes());
            out.extend_from_slice(&self.params.seed.to_le_bytes());
            for tree in &self.trees {
                out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
                for node in &tree.nodes {
                    match node {
                        Node::Split {
                            direction,
                            offset,
                            left,
                            right,
                        } => {
                            direction.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                            out.extend_from_slice(&offset.to_le_bytes());
                            out.extend_from_slice(&left.to_le_bytes());
                            out.extend_from_slice(&right.to_le_bytes());
                        }
                        Node::Leaf { rows } => {
                            out.extend(std::iter::repeat(0u8).take(4 * (dim + 1)));
                            out.extend_from_slice(&LEAF_SENTINEL.to_le_bytes());
                            out.extend_from_slice(&LEAF_SENTINEL.to_le_bytes());
                            out.extend_from_slice(&(rows.len() as u16).to_le_bytes());
                            rows.iter().for_each(|r| out.extend_from_slice(&r.to_le_bytes()));
                        }
                    }
                }
            }
            Ok(())
        })?;
        fs::write(path, bytes).map_err(EmbedError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(EmbedError::from)?;
        let (batch, rest) = decode_container(FOREST_MAGIC, &bytes)?;
        if batch.is_empty() {
            return Err(IndexError::EmptyBatch);
        }
        let (ids, dim, data, provider_tag) = batch.into_parts();
        let m = ids.len() as u32;
        let mut r = ByteReader::new(rest);
        let params = ForestParams {
            n_trees: r.u32()? as usize,
            leaf_size: r.u32()? as usize,
            seed: r.u64()?,
        };
        let mut trees = Vec::with_capacity(params.n_trees.min(1 << 16));
        for _ in 0..params.n_trees {
            let count = r.u32()?;
            if count == 0 {
                return Err(corrupt("tree without nodes"));
            }
            let mut nodes = Vec::new();
            for _ in 0..count {
                let direction = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                let offset = r.f32()?;
                let (left, right) = (r.u32()?, r.u32()?);
                if left == LEAF_SENTINEL && right == LEAF_SENTINEL {
                    let len = r.u16()?;
                    let rows = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
                    if rows.iter().any(|&row| row >= m) {
                        return Err(corrupt("leaf row out of range"));
                    }
                    nodes.push(Node::Leaf { rows });
                } else {
                    if left >= count || right >= count {
                        return Err(corrupt("child index out of range"));
                    }
                    nodes.push(Node::Split {
                        direction,
                        offset,
                        left,
                        right,
                    });
                }
            }
            trees.push(Tree { nodes });
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes after forest"));
        }
        Ok(Self {
            ids,
            dim,
            data,
            provider_tag,
            params,
            trees,
            comparisons: AtomicU64::new(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::NeighborIndex;

    fn batch() -> EmbeddingBatch {
        let m = 60;
        let dim = 6;
        let data: Vec<f32> = (0..m * dim).map(|i| ((i * 7919) % 101) as f32 / 101.0 - 0.5).collect();
        let ids = (0..m).rev().map(|i| format!("id{i:03}")).collect();
        EmbeddingBatch::new(ids, dim, data, "synthetic").unwrap()
    }

    #[test]
    fn flat_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.erix");
        let idx = FlatIndex::build(&batch()).unwrap();
        idx.save(&path).unwrap();
        let back = FlatIndex::load(&path).unwrap();
        assert_eq!(back.ids, idx.ids);
        assert_eq!(back.data, idx.data);
        assert_eq!(back.provider_tag(), "synthetic");
        assert_eq!(&fs::read(&path).unwrap()[..5], b"ERIX1");
        // A forest file is not a flat index.
        let forest_path = dir.path().join("f.errf");
        RpForestIndex::build(&batch(), ForestParams { n_trees: 2, leaf_size: 5, seed: 1 })
            .unwrap()
            .save(&forest_path)
            .unwrap();
        assert!(FlatIndex::load(&forest_path).is_err());
    }

    #[test]
    fn forest_round_trip_answers_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.errf");
        let b = batch();
        let forest = RpForestIndex::build(&b, ForestParams { n_trees: 3, leaf_size: 5, seed: 11 }).unwrap();
        forest.save(&path).unwrap();
        let back = RpForestIndex::load(&path).unwrap();
        assert_eq!(back.trees, forest.trees);
        assert_eq!(back.params(), forest.params());
        for i in 0..b.len() {
            assert_eq!(back.search(b.row(i), 4).unwrap(), forest.search(b.row(i), 4).unwrap());
        }
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        fs::write(&path, &bytes).unwrap();
        assert!(RpForestIndex::load(&path).is_err());
    }
}
