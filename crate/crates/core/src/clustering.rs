//! Constrained, area-weighted k-means++.
//!
//! Used twice: as the semi-supervised baseline over every mask (base
//! centroids start at the labeled prototypes and labeled masks are pinned to
//! their class), and as the final division of pending masks into novel
//! clusters. A mask's pixel area is its sample weight in both seeding and
//! centroid updates; distances are plain L2.
//!
//! Points are always visited in ascending `mask_id` order, so every sampling
//! draw and weighted reduction is independent of record order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DiscoveryInstance, Label, LabelState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("base class {0} has no labeled masks")]
    EmptyClass(u32),
    #[error("{available} candidates for {requested} novel seeds")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("centroid dimension {got} differs from feature dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} initial centroids, got {got}")]
    CentroidCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// All masks, `k_base + k_novel` clusters, labeled masks pinned.
    #[default]
    Baseline,
    /// Only pending masks, `k_novel` clusters, no base centroids.
    NovelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k_novel: usize,
    pub rng_seed: u64,
    pub max_lloyd_iters: usize,
    /// Independent seedings; the lowest final inertia wins.
    pub n_init: usize,
    /// Keep base centroids at the labeled prototypes in baseline mode.
    pub freeze_base_centroids: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k_novel: 4,
            rng_seed: 0,
            max_lloyd_iters: 300,
            n_init: 10,
            freeze_base_centroids: false,
        }
    }
}

/// Row-major `count × dim` centroid matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    dim: usize,
    data: Vec<f64>,
}

impl Centroids {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Self {
        let mut data = Vec::new();
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    fn concat(&self, other: &Centroids) -> Centroids {
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Centroids {
            dim: self.dim,
            data,
        }
    }
}

fn sq_dist_to(point: &[f32], centroid: &[f64]) -> f64 {
    point
        .iter()
        .zip(centroid)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Outcome of one constrained k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub mode: ClusterMode,
    pub centroids: Centroids,
    /// Instance indices of the clustered masks, ascending by `mask_id`.
    pub members: Vec<usize>,
    /// Cluster of `members[i]`. In baseline mode clusters below `k_base`
    /// are base classes; in novel-only mode every cluster is novel.
    pub assignment: Vec<u32>,
    /// Sample weight (pixel area) of `members[i]`.
    pub weights: Vec<f64>,
    /// Σ W·‖f − centroid‖² of the final assignment.
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    /// Cluster of instance index `i`, if it was clustered.
    pub fn cluster_of(&self, i: usize) -> Option<u32> {
        self.members
            .iter()
            .position(|&m| m == i)
            .map(|p| self.assignment[p])
    }
}

/// W-weighted mean of the labeled masks of each base class.
pub fn base_prototypes(instance: &DiscoveryInstance) -> Result<Centroids, ClusterError> {
    let dim = instance.features.dim();
    let k_base = instance.k_base as usize;
    let mut sums = vec![0.0f64; k_base * dim];
    let mut mass = vec![0.0f64; k_base];
    for i in by_mask_id(instance, (0..instance.len()).collect()) {
        let m = &instance.masks[i];
        let Some(c) = m.label.filter(|_| m.is_labeled()) else {
            continue;
        };
        let c = c as usize;
        let w = m.weight();
        for (s, &v) in sums[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(instance.features.row(i))
        {
            *s += w * v as f64;
        }
        mass[c] += w;
    }
    for c in 0..k_base {
        if mass[c] <= 0.0 {
            return Err(ClusterError::EmptyClass(c as u32));
        }
        for s in &mut sums[c * dim..(c + 1) * dim] {
            *s /= mass[c];
        }
    }
    Ok(Centroids::new(dim.max(1), sums))
}

/// k-means++ seeding of `k_novel` centroids among `candidates`.
///
/// A candidate is drawn with probability ∝ W·D², where D is its distance to
/// the nearest base prototype or already-chosen seed. When every remaining
/// W·D² is zero the draw falls back to ∝ W over candidates not yet chosen.
pub fn seed_novel_centroids<R: Rng>(
    candidates: &[&[f32]],
    weights: &[f64],
    prototypes: &Centroids,
    k_novel: usize,
    rng: &mut R,
) -> Result<Centroids, ClusterError> {
    if candidates.len() < k_novel {
        return Err(ClusterError::NotEnoughCandidates {
            requested: k_novel,
            available: candidates.len(),
        });
    }
    let dim = prototypes.dim();
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|f| {
            (0..prototypes.count())
                .map(|c| sq_dist_to(f, prototypes.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut chosen = vec![false; candidates.len()];
    let mut seeds = Centroids::empty(dim);
    for _ in 0..k_novel {
        let scores: Vec<f64> = nearest
            .iter()
            .zip(weights)
            .zip(&chosen)
            .map(|((&d2, &w), &taken)| {
                if taken || !d2.is_finite() {
                    0.0
                } else {
                    w * d2
                }
            })
            .collect();
        let pick = sample_index(&scores, rng).or_else(|| {
            let fallback: Vec<f64> = weights
                .iter()
                .zip(&chosen)
                .map(|(&w, &taken)| if taken { 0.0 } else { w })
                .collect();
            sample_index(&fallback, rng)
        });
        // Unreachable while candidates remain, since every weight is positive.
        let Some(pick) = pick.or_else(|| chosen.iter().position(|&t| !t)) else {
            break;
        };
        chosen[pick] = true;
        let seed: Vec<f64> = candidates[pick].iter().map(|&v| v as f64).collect();
        for (d, f) in nearest.iter_mut().zip(candidates) {
            *d = d.min(sq_dist_to(f, &seed));
        }
        seeds.push(&seed);
    }
    Ok(seeds)
}

/// Draws an index with probability ∝ `scores`; `None` when all are zero.
fn sample_index<R: Rng>(scores: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = scores.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &s) in scores.iter().enumerate() {
        if s > 0.0 {
            acc += s;
            last_positive = Some(i);
            if target < acc {
                return Some(i);
            }
        }
    }
    last_positive
}

fn by_mask_id(instance: &DiscoveryInstance, mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by_key(|&i| instance.masks[i].mask_id);
    idx
}

/// Masks taking part in clustering under `mode`, ascending by `mask_id`.
pub fn cluster_members(
    instance: &DiscoveryInstance,
    state: &LabelState,
    mode: ClusterMode,
) -> Vec<usize> {
    let idx = match mode {
        ClusterMode::Baseline => (0..instance.len()).collect(),
        ClusterMode::NovelOnly => (0..instance.len())
            .filter(|&i| !state.fixed[i] && state.labels[i] == Label::NovelPending)
            .collect(),
    };
    by_mask_id(instance, idx)
}

/// Lloyd iterations from `init` until the assignment is unchanged or
/// `cfg.max_lloyd_iters` is reached.
///
/// In baseline mode `init` holds `k_base` base centroids followed by the
/// novel seeds, and labeled masks stay on their class. A cluster left empty
/// is moved onto the free point with the largest W·D² to its current
/// centroid; when that is zero the centroid stays put.
pub fn constrained_kmeans(
    instance: &DiscoveryInstance,
    state: &LabelState,
    init: Centroids,
    mode: ClusterMode,
    cfg: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    let dim = instance.features.dim();
    if init.dim() != dim.max(1) {
        return Err(ClusterError::DimensionMismatch {
            expected: dim,
            got: init.dim(),
        });
    }
    let k_base = instance.k_base as usize;
    let members = cluster_members(instance, state, mode);
    let weights: Vec<f64> = members
        .iter()
        .map(|&i| instance.masks[i].weight())
        .collect();
    let pinned: Vec<Option<u32>> = members
        .iter()
        .map(|&i| match mode {
            ClusterMode::Baseline if state.fixed[i] => state.labels[i].class(),
            _ => None,
        })
        .collect();
    let n_clusters = init.count();
    if mode == ClusterMode::Baseline && n_clusters < k_base {
        return Err(ClusterError::CentroidCount {
            expected: k_base + cfg.k_novel,
            got: n_clusters,
        });
    }
    let rows: Vec<&[f32]> = members.iter().map(|&i| instance.features.row(i)).collect();

    let mut centroids = init;
    let mut assignment: Vec<u32> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next: Vec<u32> = rows
            .iter()
            .zip(&pinned)
            .map(|(f, pin)| match pin {
                Some(c) => *c,
                None => nearest_centroid(f, &centroids),
            })
            .collect();
        history.push(inertia_of(&rows, &weights, &next, &centroids));
        let unchanged = next == assignment;
        assignment = next;
        if unchanged || iterations >= cfg.max_lloyd_iters || rows.is_empty() {
            break;
        }
        update_centroids(
            &mut centroids,
            &rows,
            &weights,
            &assignment,
            &pinned,
            mode,
            k_base,
            cfg,
        );
    }

    let inertia = *history.last().unwrap_or(&0.0);
    Ok(ClusterModel {
        mode,
        centroids,
        members,
        assignment,
        weights,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn nearest_centroid(f: &[f32], centroids: &Centroids) -> u32 {
    let mut best = (0u32, f64::INFINITY);
    for c in 0..centroids.count() {
        let d = sq_dist_to(f, centroids.row(c));
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best.0
}

fn inertia_of(rows: &[&[f32]], weights: &[f64], assignment: &[u32], centroids: &Centroids) -> f64 {
    rows.iter()
        .zip(weights)
        .zip(assignment)
        .map(|((f, &w), &a)| w * sq_dist_to(f, centroids.row(a as usize)))
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn update_centroids(
    centroids: &mut Centroids,
    rows: &[&[f32]],
    weights: &[f64],
    assignment: &[u32],
    pinned: &[Option<u32>],
    mode: ClusterMode,
    k_base: usize,
    cfg: &KMeansConfig,
) {
    let dim = centroids.dim();
    let n_clusters = centroids.count();
    let mut sums = vec![0.0f64; n_clusters * dim];
    let mut mass = vec![0.0f64; n_clusters];
    for ((f, &w), &a) in rows.iter().zip(weights).zip(assignment) {
        let a = a as usize;
        for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(f.iter()) {
            *s += w * v as f64;
        }
        mass[a] += w;
    }

    // Distances to the pre-update centroids, for empty-cluster repair.
    let mut slack: Vec<(usize, f64)> = rows
        .iter()
        .zip(weights)
        .zip(assignment)
        .enumerate()
        .filter(|(p, _)| pinned[*p].is_none())
        .map(|(p, ((f, &w), &a))| (p, w * sq_dist_to(f, centroids.row(a as usize))))
        .collect();

    for c in 0..n_clusters {
        let frozen = mode == ClusterMode::Baseline && c < k_base && cfg.freeze_base_centroids;
        if frozen {
            continue;
        }
        if mass[c] > 0.0 {
            let m = mass[c];
            for (dst, &s) in centroids
                .row_mut(c)
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s / m;
            }
        } else {
            // Farthest free point by W·D², lowest position on ties.
            let best =
                slack
                    .iter()
                    .enumerate()
                    .fold(
                        None::<(usize, usize, f64)>,
                        |best, (s, &(p, v))| match best {
                            Some((_, _, bv)) if bv >= v => best,
                            _ => Some((s, p, v)),
                        },
                    );
            if let Some((slot, p, v)) = best {
                if v > 0.0 {
                    let row: Vec<f64> = rows[p].iter().map(|&x| x as f64).collect();
                    centroids.row_mut(c).copy_from_slice(&row);
                    slack.swap_remove(slot);
                }
            }
        }
    }
}

/// Full fit: base prototypes, `n_init` k-means++ seedings, Lloyd from each,
/// lowest inertia kept (first on ties).
///
/// In novel-only mode the cluster count is `min(k_novel, pending masks)`;
/// with no pending masks the model is empty.
pub fn fit(
    instance: &DiscoveryInstance,
    state: &LabelState,
    mode: ClusterMode,
    cfg: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    let prototypes = base_prototypes(instance)?;
    let members = cluster_members(instance, state, mode);
    let candidates: Vec<usize> = match mode {
        ClusterMode::Baseline => members
            .iter()
            .copied()
            .filter(|&i| !state.fixed[i])
            .collect(),
        ClusterMode::NovelOnly => members.clone(),
    };
    let k = match mode {
        ClusterMode::Baseline => cfg.k_novel,
        ClusterMode::NovelOnly => cfg.k_novel.min(candidates.len()),
    };
    let rows: Vec<&[f32]> = candidates
        .iter()
        .map(|&i| instance.features.row(i))
        .collect();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&i| instance.masks[i].weight())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..cfg.n_init.max(1) {
        let seeds = seed_novel_centroids(&rows, &weights, &prototypes, k, &mut rng)?;
        let init = match mode {
            ClusterMode::Baseline => prototypes.concat(&seeds),
            ClusterMode::NovelOnly => seeds,
        };
        let model = constrained_kmeans(instance, state, init, mode, cfg)?;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("n_init >= 1"))
}
