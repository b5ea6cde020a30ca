//! Constrained k-means properties.

mod common;

use std::collections::BTreeMap;

use common::{permuted, random_instance, shuffled_order, InstanceShape};
use maskgcd_core::clustering::{fit, ClusterMode, ClusterModel, KMeansConfig};
use maskgcd_core::model::{DiscoveryInstance, FeatureMatrix, LabelState, MaskRecord, Split};
use maskgcd_core::synth::clustering_accuracy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn shape(n: usize, k_novel: u32) -> InstanceShape {
    InstanceShape {
        n,
        dim: 2,
        k_base: 2,
        k_novel,
        labeled_share: 0.3,
        integer_features: false,
    }
}

fn config(inst: &DiscoveryInstance, seed: u64) -> KMeansConfig {
    KMeansConfig {
        k_novel: inst.k_novel as usize,
        rng_seed: seed,
        n_init: 3,
        ..KMeansConfig::default()
    }
}

fn by_mask_id(inst: &DiscoveryInstance, model: &ClusterModel) -> BTreeMap<u64, u32> {
    model
        .members
        .iter()
        .zip(&model.assignment)
        .map(|(&i, &c)| (inst.masks[i].mask_id, c))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn inertia_never_rises(seed in any::<u64>(), n in 10usize..60, k_novel in 1u32..4, baseline in any::<bool>()) {
        let inst = random_instance(seed, &shape(n, k_novel));
        let state = LabelState::initial(&inst);
        let mode = if baseline { ClusterMode::Baseline } else { ClusterMode::NovelOnly };
        let model = fit(&inst, &state, mode, &config(&inst, seed)).unwrap();
        for w in model.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn baseline_pins_labeled_masks(seed in any::<u64>(), n in 10usize..60, k_novel in 1u32..4, frozen in any::<bool>()) {
        let inst = random_instance(seed, &shape(n, k_novel));
        let state = LabelState::initial(&inst);
        let cfg = KMeansConfig { freeze_base_centroids: frozen, ..config(&inst, seed) };
        let model = fit(&inst, &state, ClusterMode::Baseline, &cfg).unwrap();
        prop_assert_eq!(model.members.len(), n);
        for (pos, &i) in model.members.iter().enumerate() {
            if let Some(l) = inst.masks[i].label {
                prop_assert_eq!(model.assignment[pos], l);
            }
        }
    }

    #[test]
    fn input_order_is_irrelevant(seed in any::<u64>(), n in 10usize..50, baseline in any::<bool>()) {
        let inst = random_instance(seed, &shape(n, 2));
        let order = shuffled_order(n, seed ^ 7);
        let other = permuted(&inst, &order);
        let mode = if baseline { ClusterMode::Baseline } else { ClusterMode::NovelOnly };
        let a = fit(&inst, &LabelState::initial(&inst), mode, &config(&inst, 3)).unwrap();
        let b = fit(&other, &LabelState::initial(&other), mode, &config(&other, 3)).unwrap();
        prop_assert_eq!(by_mask_id(&inst, &a), by_mask_id(&other, &b));
        prop_assert_eq!(a.inertia, b.inertia);
    }
}

#[test]
fn separated_blobs_are_recovered() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k_novel, dim, per_blob, std) = (4usize, 5usize, 15usize, 0.1f64);
        let sep = 10.0 * std;
        // Blob centers on scaled axes are pairwise sep·√2 apart.
        let mut masks = Vec::new();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        let mut push = |center: Vec<f64>, label: Option<u32>, class: u32, rng: &mut ChaCha8Rng| {
            let id = masks.len() as u64;
            masks.push(MaskRecord {
                mask_id: id,
                image_id: 0,
                area: rng.random_range(1..=20),
                bbox: [0, 0, 1, 1],
                label,
                split: if label.is_some() {
                    Split::Labeled
                } else {
                    Split::Unlabeled
                },
                geometry: None,
            });
            rows.push(
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        (c + std * z) as f32
                    })
                    .collect::<Vec<f32>>(),
            );
            truth.push(class);
        };
        // One labeled base class far from everything.
        push(vec![-50.0; dim], Some(0), 0, &mut rng);
        for b in 0..k_novel {
            let mut center = vec![0.0; dim];
            center[b] = sep;
            for _ in 0..per_blob {
                push(center.clone(), None, 1 + b as u32, &mut rng);
            }
        }
        let inst = DiscoveryInstance {
            masks,
            features: FeatureMatrix::from_rows(dim, &rows),
            k_base: 1,
            k_novel: k_novel as u32,
            images: vec![],
        };
        let state = LabelState::initial(&inst);
        let cfg = KMeansConfig {
            k_novel,
            rng_seed: seed,
            ..KMeansConfig::default()
        };
        let model = fit(&inst, &state, ClusterMode::NovelOnly, &cfg).unwrap();
        let predicted: Vec<Option<u32>> = (0..inst.len()).map(|i| model.cluster_of(i)).collect();
        let unlabeled_truth: Vec<u32> = truth[1..].to_vec();
        let acc = clustering_accuracy(&unlabeled_truth, &predicted[1..]);
        assert_eq!(acc, 1.0, "seed {seed}");
    }
}
