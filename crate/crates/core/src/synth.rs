//! Synthetic discovery instances with known ground truth.
//!
//! Every class is a Gaussian concept in feature space. A concept is split
//! into `fragmentation` parts whose centers sit around the class center, and
//! each mask is a noisy sample of one part. Each novel class has a sibling
//! base class at distance `center_separation`. Its first part is pulled to
//! within `leak_distance` of the sibling's first part, and a few bridge
//! masks sit halfway between the two, so they look like base masks from up
//! close.
//!
//! Geometry is a tiling of full-height vertical strips: an image is a row of
//! masks laid side by side. Labeled images carry base classes only.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eval::hungarian_match;
use crate::knn::squared_distance;
use crate::mask_io::rle::RleMask;
use crate::mask_io::{self, InstancePaths, MaskIoError};
use crate::model::{
    DiscoveryInstance, FeatureMatrix, ImageInfo, MaskRecord, SegmentationMap, Split,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub k_base: u32,
    pub k_novel: u32,
    /// Total mask count over both splits.
    pub n_masks: usize,
    /// Mask count of a novel class relative to a base class.
    pub novel_mask_ratio: f64,
    pub feature_dim: usize,
    /// Per-mask noise around its part center.
    pub intra_std: f64,
    /// Minimum distance between class centers.
    pub center_separation: f64,
    /// Target share of novel pixels in the unlabeled split.
    pub novel_pixel_fraction: f64,
    /// Parts per concept; 1 disables fragmentation.
    pub fragmentation: u32,
    /// Distance of a part center from its class center, in units of
    /// `center_separation`.
    pub part_radius: f64,
    /// Distance between a novel class's first part and its sibling's first
    /// part, in units of `intra_std`.
    pub leak_distance: f64,
    /// Novel masks per class drawn halfway between the first part and the
    /// sibling's first part.
    pub bridge_masks: usize,
    /// Share of base masks placed in the labeled split.
    pub labeled_fraction: f64,
    pub masks_per_image: usize,
    pub strip_height: u32,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            k_base: 15,
            k_novel: 4,
            n_masks: 2000,
            novel_mask_ratio: 0.5,
            feature_dim: 16,
            intra_std: 0.1,
            center_separation: 1.0,
            novel_pixel_fraction: 0.02,
            fragmentation: 3,
            part_radius: 0.5,
            leak_distance: 10.0,
            bridge_masks: 3,
            labeled_fraction: 0.4,
            masks_per_image: 20,
            strip_height: 16,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<(), String> {
        let fail = |m: String| Err(m);
        if self.k_base == 0 || self.k_novel == 0 {
            return fail("k_base and k_novel must be positive".into());
        }
        if !(self.intra_std > 0.0 && self.center_separation > 0.0) {
            return fail("intra_std and center_separation must be > 0".into());
        }
        if !(self.novel_pixel_fraction > 0.0 && self.novel_pixel_fraction < 1.0) {
            return fail(format!(
                "novel_pixel_fraction must lie in (0, 1), got {}",
                self.novel_pixel_fraction
            ));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return fail(format!(
                "labeled_fraction must lie in (0, 1), got {}",
                self.labeled_fraction
            ));
        }
        if self.fragmentation == 0
            || self.feature_dim == 0
            || self.masks_per_image == 0
            || self.strip_height == 0
        {
            return fail(
                "fragmentation, feature_dim, masks_per_image and strip_height must be positive"
                    .into(),
            );
        }
        if self.novel_mask_ratio.is_nan() || self.novel_mask_ratio <= 0.0 {
            return fail("novel_mask_ratio must be > 0".into());
        }
        let per_base = self.n_masks as f64
            / (self.k_base as f64 + self.k_novel as f64 * self.novel_mask_ratio);
        if per_base * self.labeled_fraction < 1.0 || per_base * self.novel_mask_ratio < 1.0 {
            return fail(format!(
                "n_masks {} is too small for every class and split",
                self.n_masks
            ));
        }
        Ok(())
    }
}

/// Part centers with the class each belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueCenters {
    pub centers: Vec<Vec<f64>>,
    pub class_of: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub instance: DiscoveryInstance,
    /// Class of every mask, in instance order.
    pub ground_truth: Vec<u32>,
    /// Ground-truth maps of the unlabeled images.
    pub gt_maps: Vec<SegmentationMap>,
    pub centers: TrueCenters,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn class_centers(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (d, s) = (spec.feature_dim, spec.center_separation);
    let far_enough = |c: &[f64], placed: &[Vec<f64>]| placed.iter().all(|p| dist(c, p) >= s);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut scale = s;
    while centers.len() < spec.k_base as usize {
        let c: Vec<f64> = (0..d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if far_enough(&c, &centers) {
            centers.push(c);
        } else {
            scale *= 1.01;
        }
    }
    for n in 0..spec.k_novel as usize {
        let sibling = n % spec.k_base as usize;
        let mut radius = s;
        loop {
            let u = unit_vector(rng, d);
            let c: Vec<f64> = centers[sibling]
                .iter()
                .zip(&u)
                .map(|(b, u)| b + radius * u)
                .collect();
            // The sibling sits at exactly `radius`; everything else must be farther.
            let ok = centers
                .iter()
                .enumerate()
                .all(|(j, p)| j == sibling || dist(&c, p) >= s);
            if ok {
                centers.push(c);
                break;
            }
            radius *= 1.001;
        }
    }
    centers
}

fn part_centers(
    spec: &SynthSpec,
    classes: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<f64>>> {
    let f = spec.fragmentation as usize;
    let r = spec.part_radius * spec.center_separation;
    let mut parts: Vec<Vec<Vec<f64>>> = classes
        .iter()
        .map(|c| {
            (0..f)
                .map(|_| {
                    if f == 1 {
                        return c.clone();
                    }
                    let u = unit_vector(rng, spec.feature_dim);
                    c.iter().zip(&u).map(|(x, u)| x + r * u).collect()
                })
                .collect()
        })
        .collect();
    if f > 1 {
        let kb = spec.k_base as usize;
        for n in 0..spec.k_novel as usize {
            let sibling_part = parts[n % kb][0].clone();
            let own = &classes[kb + n];
            // Step from the sibling's part toward the novel class center.
            let toward: Vec<f64> = own.iter().zip(&sibling_part).map(|(a, b)| a - b).collect();
            let len = toward.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let step = spec.leak_distance * spec.intra_std;
            parts[kb + n][0] = sibling_part
                .iter()
                .zip(&toward)
                .map(|(b, t)| b + step * t / len)
                .collect();
        }
    }
    parts
}

/// Splits `total` into `parts` near-equal integers, larger ones first.
fn split_even(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

struct Draft {
    class: u32,
    part: usize,
    bridge: bool,
    labeled: bool,
    width: u32,
}

/// Draws an instance. The same spec always yields bit-identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, String> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let kb = spec.k_base as usize;
    let kn = spec.k_novel as usize;
    let classes = class_centers(spec, &mut rng);
    let parts = part_centers(spec, &classes, &mut rng);

    // Mask counts per class.
    let per_base = spec.n_masks as f64 / (kb as f64 + kn as f64 * spec.novel_mask_ratio);
    let novel_each = (per_base * spec.novel_mask_ratio).round().max(1.0) as usize;
    let base_total = spec.n_masks - novel_each * kn;
    let base_counts = split_even(base_total, kb);

    let mut drafts = Vec::with_capacity(spec.n_masks);
    for (c, &count) in base_counts.iter().enumerate() {
        let labeled = ((count as f64 * spec.labeled_fraction).round() as usize).clamp(1, count - 1);
        let mut flags: Vec<bool> = (0..count).map(|i| i < labeled).collect();
        flags.shuffle(&mut rng);
        for (i, l) in flags.into_iter().enumerate() {
            drafts.push(Draft {
                class: c as u32,
                part: i % spec.fragmentation as usize,
                bridge: false,
                labeled: l,
                width: 0,
            });
        }
    }
    for n in 0..kn {
        for i in 0..novel_each {
            let part = i % spec.fragmentation as usize;
            drafts.push(Draft {
                class: (kb + n) as u32,
                part,
                bridge: spec.fragmentation > 1
                    && part == 0
                    && i / (spec.fragmentation as usize) < spec.bridge_masks,
                labeled: false,
                width: 0,
            });
        }
    }

    // Novel strips are 1-3 columns wide; base widths are scaled so the novel
    // share of unlabeled pixels meets the target.
    for d in drafts.iter_mut().filter(|d| d.class as usize >= kb) {
        d.width = rng.random_range(1..=3);
    }
    let novel_cols: f64 = drafts
        .iter()
        .filter(|d| d.class as usize >= kb)
        .map(|d| d.width as f64)
        .sum();
    let base_cols = novel_cols * (1.0 - spec.novel_pixel_fraction) / spec.novel_pixel_fraction;
    let raw: Vec<f64> = drafts.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let unlabeled_base: Vec<usize> = (0..drafts.len())
        .filter(|&i| (drafts[i].class as usize) < kb && !drafts[i].labeled)
        .collect();
    let raw_sum: f64 = unlabeled_base.iter().map(|&i| raw[i]).sum();
    let mean_width = base_cols / unlabeled_base.len() as f64;
    for (i, d) in drafts.iter_mut().enumerate() {
        if (d.class as usize) < kb {
            let w = if d.labeled {
                raw[i] * mean_width
            } else {
                raw[i] * base_cols / raw_sum
            };
            d.width = (w.round() as u32).max(1);
        }
    }

    // Group into images: labeled masks first, then a shuffled unlabeled pool.
    let mut labeled_idx: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].labeled).collect();
    let mut unlabeled_idx: Vec<usize> = (0..drafts.len()).filter(|&i| !drafts[i].labeled).collect();
    labeled_idx.shuffle(&mut rng);
    unlabeled_idx.shuffle(&mut rng);

    let h = spec.strip_height;
    let mut masks = Vec::with_capacity(drafts.len());
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(drafts.len());
    let mut ground_truth = Vec::with_capacity(drafts.len());
    let mut images = Vec::new();
    let mut gt_maps = Vec::new();
    let groups = labeled_idx
        .chunks(spec.masks_per_image)
        .map(|g| (g, true))
        .chain(
            unlabeled_idx
                .chunks(spec.masks_per_image)
                .map(|g| (g, false)),
        );
    for (image_id, (group, labeled)) in groups.enumerate() {
        let image_id = image_id as u64;
        let width: u32 = group.iter().map(|&i| drafts[i].width).sum();
        images.push(ImageInfo {
            image_id,
            height: h,
            width,
        });
        let mut gt = (!labeled).then(|| SegmentationMap::filled(image_id, h, width, 0));
        let mut x0 = 0u32;
        for &i in group {
            let d = &drafts[i];
            let bridge_center: Vec<f64>;
            let center = if d.bridge {
                let sibling = &parts[(d.class as usize - kb) % kb][0];
                let own = &parts[d.class as usize][0];
                bridge_center = own
                    .iter()
                    .zip(sibling)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                &bridge_center
            } else {
                &parts[d.class as usize][d.part]
            };
            rows.push(
                center
                    .iter()
                    .map(|&c| (c + spec.intra_std * rng.sample::<f64, _>(StandardNormal)) as f32)
                    .collect(),
            );
            let geometry = RleMask::rectangle(h, width, 0, x0, h, d.width);
            masks.push(MaskRecord {
                mask_id: masks.len() as u64,
                image_id,
                area: geometry.area(),
                bbox: [x0, 0, d.width, h],
                label: labeled.then_some(d.class),
                split: if labeled {
                    Split::Labeled
                } else {
                    Split::Unlabeled
                },
                geometry: Some(geometry),
            });
            if let Some(gt) = gt.as_mut() {
                for y in 0..h {
                    for x in x0..x0 + d.width {
                        gt.labels[(y * width + x) as usize] = d.class as u16;
                    }
                }
            }
            ground_truth.push(d.class);
            x0 += d.width;
        }
        gt_maps.extend(gt);
    }

    let centers = TrueCenters {
        centers: parts.iter().flatten().cloned().collect(),
        class_of: parts
            .iter()
            .enumerate()
            .flat_map(|(c, p)| std::iter::repeat_n(c as u32, p.len()))
            .collect(),
    };
    Ok(SynthData {
        instance: DiscoveryInstance {
            masks,
            features: FeatureMatrix::from_rows(spec.feature_dim, &rows),
            k_base: spec.k_base,
            k_novel: spec.k_novel,
            images,
        },
        ground_truth,
        gt_maps,
        centers,
    })
}

/// Class of the nearest true center for every feature row; ties go to the
/// lowest class.
pub fn oracle_assign(instance: &DiscoveryInstance, centers: &TrueCenters) -> Vec<u32> {
    let centers32: Vec<Vec<f32>> = centers
        .centers
        .iter()
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    (0..instance.features.rows())
        .map(|i| {
            let f = instance.features.row(i);
            let mut best = (f64::INFINITY, u32::MAX);
            for (c, &class) in centers32.iter().zip(&centers.class_of) {
                let d = squared_distance(f, c);
                if d < best.0 || (d == best.0 && class < best.1) {
                    best = (d, class);
                }
            }
            best.1
        })
        .collect()
}

/// Fraction of items whose predicted cluster maps onto their true class
/// under the best one-to-one matching of clusters to classes. `None`
/// predictions count as wrong.
pub fn clustering_accuracy(truth: &[u32], predicted: &[Option<u32>]) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    if truth.is_empty() {
        return 1.0;
    }
    let mut classes: Vec<u32> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut clusters: Vec<u32> = predicted.iter().flatten().copied().collect();
    clusters.sort_unstable();
    clusters.dedup();
    let mut counts = vec![vec![0.0; clusters.len()]; classes.len()];
    for (t, p) in truth.iter().zip(predicted) {
        if let Some(p) = p {
            let r = classes.binary_search(t).expect("listed");
            let c = clusters.binary_search(p).expect("listed");
            counts[r][c] += 1.0;
        }
    }
    hungarian_match(&counts).total / truth.len() as f64
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut table = std::collections::BTreeMap::<(u32, u32), f64>::new();
    let mut rows = std::collections::BTreeMap::<u32, f64>::new();
    let mut cols = std::collections::BTreeMap::<u32, f64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let pairs = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| pairs(v)).sum();
    let expected = sum_a * sum_b / pairs(n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Ground-truth label line for every mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthLine {
    pub mask_id: u64,
    pub label: u32,
}

/// Writes the instance files, `gt/map_<id>.u16` and `ground_truth.ndjson`
/// into `dir`.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<(), MaskIoError> {
    mask_io::write_instance(&data.instance, &InstancePaths::in_dir(dir, true))?;
    mask_io::write_maps(&data.gt_maps, &dir.join("gt"))?;
    let mut text = String::new();
    for (m, &label) in data.instance.masks.iter().zip(&data.ground_truth) {
        let line = TruthLine {
            mask_id: m.mask_id,
            label,
        };
        text.push_str(&serde_json::to_string(&line).expect("plain struct"));
        text.push('\n');
    }
    let path = dir.join("ground_truth.ndjson");
    std::fs::write(&path, text).map_err(|e| MaskIoError::io(&path, e))
}
