//! Dataset-level mIoU with identity matching for base classes and
//! Hungarian matching for novel classes.
//!
//! Intersections and unions are accumulated over all images in a confusion
//! table before any ratio is taken. Base class `c` is scored only against
//! predicted label `c`. Novel ground-truth classes are matched one-to-one to
//! predicted novel clusters so that the summed IoU is maximal; extra
//! clusters stay unmatched and their pixels count as wrong predictions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hungarian::{column_invariant_match, greedy_match};
use crate::model::{SegmentationMap, VOID};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("image {image_id}: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch {
        image_id: u64,
        pred: [u32; 2],
        gt: [u32; 2],
    },
    #[error("image {image_id} has ground truth but no prediction")]
    MissingPrediction { image_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Optimal total IoU; ties resolved in ground-truth class order, so
    /// renaming predicted clusters never changes a class score.
    #[default]
    Hungarian,
    Greedy,
}

/// Class layout of an evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpace {
    /// Classes `0..k_base` are base classes in both rasters.
    pub k_base: u16,
    /// Ground-truth labels of the novel classes.
    pub gt_novel_ids: Vec<u16>,
    /// Predicted labels denoting novel clusters.
    pub pred_novel_ids: Vec<u16>,
}

impl ClassSpace {
    /// Conventional layout: novel ids follow the base ids on both sides.
    pub fn contiguous(k_base: u16, k_novel: u16, k_pred: u16) -> Self {
        Self {
            k_base,
            gt_novel_ids: (k_base..k_base + k_novel).collect(),
            pred_novel_ids: (k_base..k_base + k_pred).collect(),
        }
    }
}

/// Pixel counts accumulated over a set of images. Merging is associative
/// and commutative.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// `(gt, pred) -> pixels`, over pixels whose ground truth is not VOID.
    pub joint: BTreeMap<(u16, u16), u64>,
}

impl ConfusionCounts {
    pub fn from_pair(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<Self, EvalError> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(EvalError::ShapeMismatch {
                image_id: gt.image_id,
                pred: [pred.height, pred.width],
                gt: [gt.height, gt.width],
            });
        }
        // Dense counting over the labels actually present, then sparse.
        let mut dense: BTreeMap<(u16, u16), u64> = BTreeMap::new();
        let mut last: Option<((u16, u16), u64)> = None;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == VOID {
                continue;
            }
            match &mut last {
                Some((key, n)) if *key == (g, p) => *n += 1,
                _ => {
                    if let Some((key, n)) = last.take() {
                        *dense.entry(key).or_default() += n;
                    }
                    last = Some(((g, p), 1));
                }
            }
        }
        if let Some((key, n)) = last {
            *dense.entry(key).or_default() += n;
        }
        Ok(Self { joint: dense })
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (&k, &v) in &other.joint {
            *self.joint.entry(k).or_default() += v;
        }
    }

    fn gt_total(&self, g: u16) -> u64 {
        self.joint
            .iter()
            .filter(|((gg, _), _)| *gg == g)
            .map(|(_, v)| v)
            .sum()
    }

    fn pred_total(&self, p: u16) -> u64 {
        self.joint
            .iter()
            .filter(|((_, pp), _)| *pp == p)
            .map(|(_, v)| v)
            .sum()
    }

    fn joint(&self, g: u16, p: u16) -> u64 {
        self.joint.get(&(g, p)).copied().unwrap_or(0)
    }

    /// IoU of ground-truth class `g` against predicted label `p`; `None` when
    /// both are absent.
    pub fn iou(&self, g: u16, p: u16) -> Option<f64> {
        let inter = self.joint(g, p);
        let union = self.gt_total(g) + self.pred_total(p) - inter;
        (union > 0).then(|| inter as f64 / union as f64)
    }
}

/// Accumulates counts over image pairs joined by image id. Every ground-truth
/// map needs a prediction; predictions without ground truth are ignored.
pub fn accumulate(
    pred_maps: &[SegmentationMap],
    gt_maps: &[SegmentationMap],
) -> Result<ConfusionCounts, EvalError> {
    let by_id: BTreeMap<u64, &SegmentationMap> =
        pred_maps.iter().map(|m| (m.image_id, m)).collect();
    let parts: Vec<ConfusionCounts> = gt_maps
        .par_iter()
        .map(|gt| {
            let pred = by_id
                .get(&gt.image_id)
                .ok_or(EvalError::MissingPrediction {
                    image_id: gt.image_id,
                })?;
            ConfusionCounts::from_pair(pred, gt)
        })
        .collect::<Result<_, _>>()?;
    let mut total = ConfusionCounts::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u16,
    pub novel: bool,
    /// `None` for a class absent from both ground truth and its prediction.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelMatch {
    pub predicted: u16,
    pub ground_truth: u16,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: Vec<ClassIou>,
    pub miou_base: f64,
    pub miou_novel: f64,
    pub miou_avg: f64,
    pub matching: Vec<NovelMatch>,
    pub unmatched_predicted: Vec<u16>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Builds the report from accumulated counts.
///
/// Novel classes with no ground-truth pixels are left out of the matching
/// and of every mean.
pub fn report_from_counts(
    counts: &ConfusionCounts,
    classes: &ClassSpace,
    strategy: MatchStrategy,
) -> EvalReport {
    let present: Vec<u16> = classes
        .gt_novel_ids
        .iter()
        .copied()
        .filter(|&g| counts.gt_total(g) > 0)
        .collect();
    let scores: Vec<Vec<f64>> = present
        .iter()
        .map(|&g| {
            classes
                .pred_novel_ids
                .iter()
                .map(|&p| counts.iou(g, p).unwrap_or(0.0))
                .collect()
        })
        .collect();
    let matched = match strategy {
        MatchStrategy::Hungarian => column_invariant_match(&scores),
        MatchStrategy::Greedy => greedy_match(&scores),
    };

    let mut per_class_iou = Vec::new();
    for c in 0..classes.k_base {
        per_class_iou.push(ClassIou {
            class: c,
            novel: false,
            iou: counts.iou(c, c),
        });
    }
    let mut matching = Vec::new();
    for &g in &classes.gt_novel_ids {
        let iou = present
            .iter()
            .position(|&x| x == g)
            .map(|row| match matched.col_of(row) {
                Some(col) => {
                    let iou = scores[row][col];
                    matching.push(NovelMatch {
                        predicted: classes.pred_novel_ids[col],
                        ground_truth: g,
                        iou,
                    });
                    iou
                }
                None => 0.0,
            });
        per_class_iou.push(ClassIou {
            class: g,
            novel: true,
            iou,
        });
    }
    let unmatched_predicted = classes
        .pred_novel_ids
        .iter()
        .copied()
        .filter(|p| !matching.iter().any(|m| m.predicted == *p))
        .collect();

    let base = per_class_iou
        .iter()
        .filter(|c| !c.novel)
        .filter_map(|c| c.iou);
    let novel = per_class_iou
        .iter()
        .filter(|c| c.novel)
        .filter_map(|c| c.iou);
    let all = per_class_iou.iter().filter_map(|c| c.iou);
    EvalReport {
        miou_base: mean(base),
        miou_novel: mean(novel),
        miou_avg: mean(all),
        per_class_iou,
        matching,
        unmatched_predicted,
    }
}

/// Scores predicted maps against ground-truth maps.
pub fn evaluate(
    pred_maps: &[SegmentationMap],
    gt_maps: &[SegmentationMap],
    classes: &ClassSpace,
    strategy: MatchStrategy,
) -> Result<EvalReport, EvalError> {
    let counts = accumulate(pred_maps, gt_maps)?;
    Ok(report_from_counts(&counts, classes, strategy))
}
