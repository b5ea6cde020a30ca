//! Confidence-weighted label propagation over the frozen neighbor table,
//! followed by structural completion.
//!
//! A class score is the confidence mass of neighbors carrying that class,
//! normalized by `k` (or by the neighbors' total confidence with
//! [`ScoreNorm::Mass`]). An unlabeled mask takes the best class when its score
//! strictly exceeds `theta`, with the score as its new confidence; otherwise it
//! stays pending. Rounds are synchronous: every score in a round is computed
//! from the previous round's state.
//!
//! Structural completion then strips pseudo-labels from masks whose
//! neighborhood holds more than a `theta` fraction of pending masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::knn::NeighborTable;
use crate::model::{Label, LabelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreNorm {
    /// Divide the confidence mass by the neighbor count.
    #[default]
    K,
    /// Divide by the total confidence of the neighbors.
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub theta: f64,
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub score_norm: ScoreNorm,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            max_iterations: 10,
            convergence_eps: 1e-6,
            score_norm: ScoreNorm::K,
        }
    }
}

impl PropagationConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.convergence_eps.is_nan() || self.convergence_eps < 0.0 {
            return Err(format!(
                "convergence_eps must be >= 0, got {}",
                self.convergence_eps
            ));
        }
        Ok(())
    }
}

/// Per-class scores of mask `i`, indexed by base class.
pub fn class_scores(
    state: &LabelState,
    table: &NeighborTable,
    i: usize,
    norm: ScoreNorm,
) -> Vec<f64> {
    let mut scores = vec![0.0; state.k_base as usize];
    let neighbors = table.neighbors(i);
    for &j in neighbors {
        if let Label::Class(c) = state.labels[j as usize] {
            scores[c as usize] += state.confidence[j as usize];
        }
    }
    let denom = match norm {
        ScoreNorm::K => neighbors.len() as f64,
        ScoreNorm::Mass => neighbors
            .iter()
            .map(|&j| state.confidence[j as usize])
            .sum(),
    };
    if denom > 0.0 {
        for s in &mut scores {
            *s /= denom;
        }
    } else {
        scores.iter_mut().for_each(|s| *s = 0.0);
    }
    scores
}

/// Best class by score, lowest index on ties.
fn argmax(scores: &[f64]) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (c, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c as u32, s));
        }
    }
    best
}

/// One synchronous propagation round.
pub fn propagate_round(
    state: &LabelState,
    table: &NeighborTable,
    cfg: &PropagationConfig,
) -> LabelState {
    let updates: Vec<(Label, f64)> = (0..state.len())
        .into_par_iter()
        .map(|i| {
            if state.fixed[i] {
                return (state.labels[i], state.confidence[i]);
            }
            match argmax(&class_scores(state, table, i, cfg.score_norm)) {
                Some((c, s)) if s > cfg.theta => (Label::Class(c), s),
                _ => (Label::NovelPending, 0.0),
            }
        })
        .collect();
    let (labels, confidence) = updates.into_iter().unzip();
    LabelState {
        k_base: state.k_base,
        labels,
        confidence,
        fixed: state.fixed.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOutcome {
    pub state: LabelState,
    /// Rounds executed, including the final unchanged round when converged.
    pub rounds: usize,
    pub converged: bool,
}

fn settled(prev: &LabelState, next: &LabelState, eps: f64) -> bool {
    prev.labels == next.labels
        && prev
            .confidence
            .iter()
            .zip(&next.confidence)
            .all(|(a, b)| (a - b).abs() <= eps)
}

/// Runs rounds until nothing moves or `max_iterations` is reached.
pub fn propagate(
    state: &LabelState,
    table: &NeighborTable,
    cfg: &PropagationConfig,
) -> PropagationOutcome {
    propagate_with(state, table, cfg, |_, _| {})
}

/// [`propagate`] with a callback receiving each round's 1-based index and result.
pub fn propagate_with(
    state: &LabelState,
    table: &NeighborTable,
    cfg: &PropagationConfig,
    mut on_round: impl FnMut(usize, &LabelState),
) -> PropagationOutcome {
    let mut current = state.clone();
    for round in 1..=cfg.max_iterations {
        let next = propagate_round(&current, table, cfg);
        on_round(round, &next);
        let done = settled(&current, &next, cfg.convergence_eps);
        current = next;
        if done {
            return PropagationOutcome {
                state: current,
                rounds: round,
                converged: true,
            };
        }
    }
    PropagationOutcome {
        state: current,
        rounds: cfg.max_iterations,
        converged: false,
    }
}

/// Single pass reverting pseudo-labeled masks that sit next to pending masks.
///
/// Pending masks first get confidence 1. The pending fraction of each
/// neighborhood is then read from that pre-pass state; reverted masks also
/// get confidence 1.
pub fn structural_completion(
    state: &LabelState,
    table: &NeighborTable,
    cfg: &PropagationConfig,
) -> LabelState {
    let mut pre = state.clone();
    for i in 0..pre.len() {
        if !pre.fixed[i] && pre.labels[i] == Label::NovelPending {
            pre.confidence[i] = 1.0;
        }
    }
    let revert: Vec<bool> = (0..pre.len())
        .into_par_iter()
        .map(|i| {
            if pre.fixed[i] || pre.labels[i] == Label::NovelPending {
                return false;
            }
            let neighbors = table.neighbors(i);
            let pending = neighbors
                .iter()
                .filter(|&&j| pre.labels[j as usize] == Label::NovelPending)
                .count();
            pending as f64 / neighbors.len() as f64 > cfg.theta
        })
        .collect();
    let mut out = pre;
    for (i, r) in revert.into_iter().enumerate() {
        if r {
            out.labels[i] = Label::NovelPending;
            out.confidence[i] = 1.0;
        }
    }
    out
}
