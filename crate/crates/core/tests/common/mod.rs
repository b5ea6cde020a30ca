#![allow(dead_code)]

use maskgcd_core::model::{DiscoveryInstance, FeatureMatrix, MaskRecord, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct InstanceShape {
    pub n: usize,
    pub dim: usize,
    pub k_base: u32,
    pub k_novel: u32,
    pub labeled_share: f64,
    /// Features are small integers, so distance ties are common.
    pub integer_features: bool,
}

/// Random instance with at least one labeled mask per base class.
pub fn random_instance(seed: u64, shape: &InstanceShape) -> DiscoveryInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(shape.n);
    let mut rows = Vec::with_capacity(shape.n);
    for i in 0..shape.n {
        let label = if i < shape.k_base as usize {
            Some(i as u32)
        } else if rng.random_bool(shape.labeled_share) {
            Some(rng.random_range(0..shape.k_base))
        } else {
            None
        };
        masks.push(MaskRecord {
            mask_id: i as u64,
            image_id: 0,
            area: rng.random_range(1..=100),
            bbox: [0, 0, 1, 1],
            label,
            split: if label.is_some() {
                Split::Labeled
            } else {
                Split::Unlabeled
            },
            geometry: None,
        });
        let row: Vec<f32> = (0..shape.dim)
            .map(|_| {
                if shape.integer_features {
                    rng.random_range(0..4) as f32
                } else {
                    rng.random_range(-2.0f32..2.0)
                }
            })
            .collect();
        rows.push(row);
    }
    DiscoveryInstance {
        masks,
        features: FeatureMatrix::from_rows(shape.dim, &rows),
        k_base: shape.k_base,
        k_novel: shape.k_novel,
        images: vec![],
    }
}

/// Reorders masks and feature rows together.
pub fn permuted(instance: &DiscoveryInstance, order: &[usize]) -> DiscoveryInstance {
    instance.subset(order)
}

pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}
