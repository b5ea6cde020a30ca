//! Exact top-k nearest-neighbor table over mask features.
//!
//! The table is built once per run and then frozen; every propagation round
//! and the structural-completion pass read the same rows.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::FeatureMatrix;

pub const CACHE_MAGIC: &[u8; 4] = b"GCDK";

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("k={k} must satisfy 1 <= k < N (N={n})")]
    KTooLarge { k: usize, n: usize },
    #[error("mask index {index} out of range (N={n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{}: {message}", path.display())]
    Cache { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Row `i` lists the `k` nearest other masks of mask `i`, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    neighbors: Vec<u32>,
    distances: Vec<f32>,
}

impl NeighborTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor indices of row `i`; panics when out of range.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f32] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Squared L2 distance accumulated in f64, dimension order.
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Exact k-NN under L2. A mask is never its own neighbor; equal distances
/// are ordered by lower index.
pub fn build_neighbor_table(features: &FeatureMatrix, k: usize) -> Result<NeighborTable, KnnError> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(KnnError::KTooLarge { k, n });
    }
    let rows: Vec<Vec<(f64, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let query = features.row(i);
            let mut cand: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(query, features.row(j)), j as u32))
                .collect();
            let by_dist = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, by_dist);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_dist);
            cand
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for (d2, j) in row {
            neighbors.push(j);
            distances.push(d2.sqrt() as f32);
        }
    }
    Ok(NeighborTable {
        n,
        k,
        neighbors,
        distances,
    })
}

/// The stored row of `mask_index` as `(neighbor, distance)` pairs.
pub fn neighbors_of(
    table: &NeighborTable,
    mask_index: usize,
) -> Result<Vec<(usize, f32)>, KnnError> {
    if mask_index >= table.n {
        return Err(KnnError::IndexOutOfRange {
            index: mask_index,
            n: table.n,
        });
    }
    Ok(table
        .neighbors(mask_index)
        .iter()
        .zip(table.distances(mask_index))
        .map(|(&j, &d)| (j as usize, d))
        .collect())
}

/// Cache layout: `GCDK`, u32 N, u32 k, then N*k `(u32 index, f32 distance)`, little-endian.
pub fn encode_cache(table: &NeighborTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * table.neighbors.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(table.n as u32).to_le_bytes());
    out.extend_from_slice(&(table.k as u32).to_le_bytes());
    for (j, d) in table.neighbors.iter().zip(&table.distances) {
        out.extend_from_slice(&j.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn decode_cache(bytes: &[u8], path: &Path) -> Result<NeighborTable, KnnError> {
    let bad = |message: String| KnnError::Cache {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 12 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing GCDK header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + 8 * n * k {
        return Err(bad(format!(
            "N={n}, k={k} needs {} bytes, file has {}",
            12 + 8 * n * k,
            bytes.len()
        )));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for pair in bytes[12..].chunks_exact(8) {
        let j = u32::from_le_bytes(pair[..4].try_into().unwrap());
        if j as usize >= n {
            return Err(bad(format!("neighbor index {j} out of range")));
        }
        neighbors.push(j);
        distances.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    Ok(NeighborTable {
        n,
        k,
        neighbors,
        distances,
    })
}

pub fn write_cache(table: &NeighborTable, path: &Path) -> Result<(), KnnError> {
    let io_err = |source| KnnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode_cache(table)).map_err(io_err)
}

pub fn read_cache(path: &Path) -> Result<NeighborTable, KnnError> {
    let bytes = fs::read(path).map_err(|source| KnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_cache(&bytes, path)
}
