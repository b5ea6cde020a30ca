//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use maskgcd_core::clustering::{fit, ClusterMode, KMeansConfig};
use maskgcd_core::config::{Mode, RunConfig};
use maskgcd_core::eval::{evaluate, hungarian_match, ClassSpace, MatchStrategy};
use maskgcd_core::knn::build_neighbor_table;
use maskgcd_core::mask_io::rle::{rle_decode, rle_encode, Bitmap, RleMask};
use maskgcd_core::mask_io::{self, InstancePaths, LabelAssignment};
use maskgcd_core::model::{
    DiscoveryInstance, FeatureMatrix, Label, LabelState, MaskRecord, SegmentationMap, Split, VOID,
};
use maskgcd_core::pipeline::{self, RunReport, Step, EVAL_REPORT, LABELS};
use maskgcd_core::propagation::{propagate_with, PropagationConfig};
use maskgcd_core::synth::{self, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || {
        format!("took {elapsed:.2?}, budget {budget:.0?}")
    })
}

// ---------------------------------------------------------------- matching

/// Best total over every injective row-to-column assignment.
fn brute_force_best(scores: &[Vec<f64>]) -> f64 {
    fn go(scores: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == scores.len() {
            *best = best.max(acc);
            return;
        }
        let spare_cols = used.iter().filter(|u| !**u).count();
        let rows_left = scores.len() - row;
        // A row may stay unmatched only when columns run short.
        if rows_left > spare_cols {
            go(scores, row + 1, used, acc, best);
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(scores, row + 1, used, acc + scores[row][c], best);
                used[c] = false;
            }
        }
    }
    let cols = scores.first().map_or(0, Vec::len);
    let mut best = f64::NEG_INFINITY;
    go(scores, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

fn hungarian_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    for case in 0..1000 {
        let rows = rng.random_range(1..=7usize);
        let cols = rng.random_range(1..=7usize);
        // Dyadic entries keep every sum exact, so totals compare with ==.
        let scores: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| rng.random_range(0..=1024u32) as f64 / 1024.0)
                    .collect()
            })
            .collect();
        let m = hungarian_match(&scores);
        let expected = brute_force_best(&scores);
        ensure(m.total == expected, || {
            format!(
                "case {case} ({rows}x{cols}): hungarian {} vs exhaustive {expected}",
                m.total
            )
        })?;
        ensure(m.pairs.len() == rows.min(cols), || {
            format!("case {case}: incomplete matching")
        })?;
        let mut rs: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut cs: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        rs.dedup();
        cs.sort_unstable();
        cs.dedup();
        ensure(
            rs.len() == m.pairs.len() && cs.len() == m.pairs.len(),
            || format!("case {case}: matching not injective"),
        )?;
    }
    let elapsed = start.elapsed();
    within(Duration::from_secs(5), elapsed)?;
    Ok(format!("1000 matrices up to 7x7 in {elapsed:.2?}"))
}

// ---------------------------------------------------------------- knn

fn knn_oracle() -> Check {
    let (n, d, k) = (500usize, 16usize, 10usize);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let features = FeatureMatrix::new(n, d, data.clone());
    let start = Instant::now();
    let table = build_neighbor_table(&features, k).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let mut s = 0.0f64;
                for t in 0..d {
                    let diff = data[i * d + t] as f64 - data[j * d + t] as f64;
                    s += diff * diff;
                }
                (s, j)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<u32> = all[..k].iter().map(|p| p.1 as u32).collect();
        let want_d: Vec<f32> = all[..k].iter().map(|p| p.0.sqrt() as f32).collect();
        ensure(table.neighbors(i) == want.as_slice(), || {
            format!("row {i}: neighbors differ")
        })?;
        ensure(table.distances(i) == want_d.as_slice(), || {
            format!("row {i}: distances differ")
        })?;
    }
    within(Duration::from_secs(2), elapsed)?;
    Ok(format!("N={n} D={d} k={k} built in {elapsed:.2?}"))
}

// ---------------------------------------------------------------- propagation

fn propagation_chain() -> Check {
    const A: Label = Label::Class(0);
    const P: Label = Label::NovelPending;
    let features = FeatureMatrix::new(3, 1, vec![0.0, 1.0, 2.0]);
    let table = build_neighbor_table(&features, 1).map_err(|e| e.to_string())?;
    let start = LabelState {
        k_base: 1,
        labels: vec![A, P, P],
        confidence: vec![1.0, 0.0, 0.0],
        fixed: vec![true, false, false],
    };
    let cfg = PropagationConfig::default();
    let mut rounds = Vec::new();
    let out = propagate_with(&start, &table, &cfg, |r, s| rounds.push((r, s.clone())));
    // Hand simulation, score = (sum of p over neighbors of a class) / k.
    // Round 1: mask 1 sees mask 0 (A, p=1) -> 1/1 > 0.1, labeled A with p=1.
    //          mask 2 sees mask 1 (still pending) -> stays pending, p=0.
    // Round 2: mask 2 sees mask 1 (A, p=1) -> labeled A with p=1.
    // Round 3: nothing changes.
    let expected: [(Vec<Label>, [f64; 3]); 3] = [
        (vec![A, A, P], [1.0, 1.0, 0.0]),
        (vec![A, A, A], [1.0, 1.0, 1.0]),
        (vec![A, A, A], [1.0, 1.0, 1.0]),
    ];
    ensure(rounds.len() == 3, || {
        format!("{} rounds, expected 3", rounds.len())
    })?;
    for ((round, state), (labels, conf)) in rounds.iter().zip(&expected) {
        ensure(&state.labels == labels, || {
            format!("round {round}: labels {:?}", state.labels)
        })?;
        for (got, want) in state.confidence.iter().zip(conf) {
            ensure((got - want).abs() <= 1e-12, || {
                format!("round {round}: confidence {got} vs {want}")
            })?;
        }
    }
    ensure(out.converged && out.rounds == 3, || {
        "did not converge at round 3".into()
    })?;
    Ok("3 rounds match to 1e-12".into())
}

// ---------------------------------------------------------------- synthetic runs

fn synth_config() -> RunConfig {
    RunConfig {
        run_id: "acceptance".into(),
        k: 10,
        theta: 0.1,
        area_threshold: 0,
        synth: Some(SynthSpec::default()),
        ..RunConfig::default()
    }
}

fn run_report(cfg: &RunConfig) -> Result<RunReport, String> {
    let inputs = pipeline::load_inputs(cfg).map_err(|e| e.to_string())?;
    let out = pipeline::run_in_memory(cfg, &inputs).map_err(|e| e.to_string())?;
    out.report.ok_or_else(|| "no report produced".into())
}

fn end_to_end() -> Check {
    let cfg = synth_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = pool.install(|| run_report(&cfg))?;
    let elapsed = start.elapsed();
    let disc = report.discovery.ok_or("no discovery scores")?;
    let detail = format!(
        "novel accuracy {:.4}, miou_avg {:.4}, {elapsed:.2?} on one thread",
        disc.novel_accuracy, report.eval.miou_avg
    );
    ensure(disc.novel_accuracy >= 0.95, || {
        format!("{detail}: accuracy below 0.95")
    })?;
    ensure(report.eval.miou_avg >= 0.90, || {
        format!("{detail}: miou_avg below 0.90")
    })?;
    within(Duration::from_secs(10), elapsed).map_err(|e| format!("{detail}: {e}"))?;
    Ok(detail)
}

fn ablation() -> Check {
    let base = synth_config();
    let clustering_only = RunConfig {
        mode: Mode::Baseline,
        ..base.clone()
    };
    let propagation_only = RunConfig {
        structural_completion: false,
        ..base.clone()
    };
    let a = run_report(&clustering_only)?.eval.miou_novel;
    let b = run_report(&propagation_only)?.eval.miou_novel;
    let c = run_report(&base)?.eval.miou_novel;
    let detail = format!("miou_novel {a:.4} < {b:.4} < {c:.4}");
    ensure(a < b && b < c, || {
        format!("not strictly increasing: {a:.4}, {b:.4}, {c:.4}")
    })?;
    Ok(detail)
}

fn parameter_stability() -> Check {
    let mut values = Vec::new();
    for k in [5, 10, 15] {
        for theta in [0.05, 0.10, 0.15] {
            let cfg = RunConfig {
                k,
                theta,
                ..synth_config()
            };
            values.push(run_report(&cfg)?.eval.miou_avg);
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!("miou_avg in [{lo:.4}, {hi:.4}], spread {:.4}", hi - lo);
    ensure(hi - lo < 0.05, || format!("{detail} exceeds 0.05"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- metric

/// Random scene: `k_base` base classes, `k_novel` novel classes, some void.
/// The prediction keeps novel clusters pure (each lies inside one ground-truth
/// novel class, which may be split in two) and corrupts base predictions freely.
struct Scene {
    gt: Vec<SegmentationMap>,
    pred: Vec<SegmentationMap>,
    k_base: u16,
    k_novel: u16,
    k_pred: u16,
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let k_base = rng.random_range(1..=4u16);
    let k_novel = rng.random_range(1..=3u16);
    // Each novel class gets one or two predicted clusters.
    let mut clusters_of: Vec<Vec<u16>> = Vec::new();
    let mut next = k_base;
    for _ in 0..k_novel {
        let parts = rng.random_range(1..=2u16);
        clusters_of.push((next..next + parts).collect());
        next += parts;
    }
    let k_pred = next - k_base;
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for image_id in 0..rng.random_range(1..=3u64) {
        let (h, w) = (rng.random_range(2..=12u32), rng.random_range(2..=12u32));
        let mut g = Vec::new();
        let mut p = Vec::new();
        for _ in 0..h * w {
            let truth = if rng.random_bool(0.05) {
                VOID
            } else {
                rng.random_range(0..k_base + k_novel)
            };
            let guess = if truth != VOID && truth >= k_base {
                let options = &clusters_of[(truth - k_base) as usize];
                if rng.random_bool(0.8) {
                    options[rng.random_range(0..options.len())]
                } else {
                    rng.random_range(0..k_base)
                }
            } else if rng.random_bool(0.7) && truth != VOID {
                truth
            } else {
                rng.random_range(0..k_base)
            };
            g.push(truth);
            p.push(guess);
        }
        gt.push(SegmentationMap {
            image_id,
            height: h,
            width: w,
            labels: g,
        });
        pred.push(SegmentationMap {
            image_id,
            height: h,
            width: w,
            labels: p,
        });
    }
    Scene {
        gt,
        pred,
        k_base,
        k_novel,
        k_pred,
    }
}

/// Arbitrary prediction: any class at any pixel, novel clusters impure.
fn scramble(scene: &mut Scene, rng: &mut ChaCha8Rng) {
    for m in &mut scene.pred {
        for v in &mut m.labels {
            if rng.random_bool(0.3) {
                *v = rng.random_range(0..scene.k_base + scene.k_pred);
            }
        }
    }
}

fn metric_invariances() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut spurious_checked = 0;
    for case in 0..100 {
        let mut scene = random_scene(&mut rng);
        if case % 2 == 1 {
            scramble(&mut scene, &mut rng);
        }
        let space = ClassSpace::contiguous(scene.k_base, scene.k_novel, scene.k_pred);
        let before = evaluate(&scene.pred, &scene.gt, &space, MatchStrategy::Hungarian)
            .map_err(|e| e.to_string())?;

        // Relabel invariance under a random permutation of predicted novel ids.
        let mut perm: Vec<u16> = (0..scene.k_pred).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let relabeled: Vec<SegmentationMap> = scene
            .pred
            .iter()
            .map(|m| SegmentationMap {
                labels: m
                    .labels
                    .iter()
                    .map(|&v| {
                        if v >= scene.k_base {
                            scene.k_base + perm[(v - scene.k_base) as usize]
                        } else {
                            v
                        }
                    })
                    .collect(),
                ..m.clone()
            })
            .collect();
        let after = evaluate(&relabeled, &scene.gt, &space, MatchStrategy::Hungarian)
            .map_err(|e| e.to_string())?;
        ensure(
            after.per_class_iou == before.per_class_iou
                && after.miou_base == before.miou_base
                && after.miou_novel == before.miou_novel
                && after.miou_avg == before.miou_avg,
            || format!("case {case}: relabeling changed the report"),
        )?;

        // Spurious cluster drawn from correctly predicted pixels of one source
        // class (a base class or a pure novel cluster).
        if case % 2 == 1 {
            continue;
        }
        let source = rng.random_range(0..scene.k_base + scene.k_pred);
        let correct = |p: u16, g: u16| {
            if g == VOID || p != source {
                return false;
            }
            if p < scene.k_base {
                p == g
            } else {
                g >= scene.k_base
            }
        };
        let spurious = scene.k_base + scene.k_pred;
        let mut moved = 0;
        let mut perturbed = scene.pred.clone();
        for (pm, gm) in perturbed.iter_mut().zip(&scene.gt) {
            for (p, &g) in pm.labels.iter_mut().zip(&gm.labels) {
                if correct(*p, g) && rng.random_bool(0.5) {
                    *p = spurious;
                    moved += 1;
                }
            }
        }
        let wider = ClassSpace::contiguous(scene.k_base, scene.k_novel, scene.k_pred + 1);
        let with_spurious = evaluate(&perturbed, &scene.gt, &wider, MatchStrategy::Hungarian)
            .map_err(|e| e.to_string())?;
        ensure(with_spurious.miou_avg <= before.miou_avg + 1e-12, || {
            format!(
                "case {case}: spurious cluster ({moved} px) raised miou_avg {} -> {}",
                before.miou_avg, with_spurious.miou_avg
            )
        })?;
        spurious_checked += 1;
    }
    Ok(format!(
        "100 relabelings exact, {spurious_checked} spurious clusters never raised miou_avg"
    ))
}

// ---------------------------------------------------------------- k-means

fn random_instance(rng: &mut ChaCha8Rng) -> DiscoveryInstance {
    let k_base = rng.random_range(1..=3u32);
    let k_novel = rng.random_range(1..=3u32);
    let dim = rng.random_range(1..=4usize);
    let n = rng.random_range(12..=60usize);
    let mut masks = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n {
        // The first k_base masks guarantee a labeled mask per base class.
        let label = if i < k_base as usize {
            Some(i as u32)
        } else if rng.random_bool(0.3) {
            Some(rng.random_range(0..k_base))
        } else {
            None
        };
        masks.push(MaskRecord {
            mask_id: i as u64,
            image_id: 0,
            area: rng.random_range(1..=50),
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
            (0..dim)
                .map(|_| rng.random_range(-3.0f32..3.0))
                .collect::<Vec<f32>>(),
        );
    }
    DiscoveryInstance {
        masks,
        features: FeatureMatrix::from_rows(dim, &rows),
        k_base,
        k_novel,
        images: vec![],
    }
}

fn kmeans_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut iterations = 0;
    for run in 0..100 {
        let instance = random_instance(&mut rng);
        let state = LabelState::initial(&instance);
        let mode = if run % 2 == 0 {
            ClusterMode::Baseline
        } else {
            ClusterMode::NovelOnly
        };
        let cfg = KMeansConfig {
            k_novel: instance.k_novel as usize,
            rng_seed: run,
            n_init: 3,
            ..KMeansConfig::default()
        };
        let model = fit(&instance, &state, mode, &cfg).map_err(|e| format!("run {run}: {e}"))?;
        for w in model.inertia_history.windows(2) {
            // Relative slack absorbs summation-order rounding only.
            ensure(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, || {
                format!("run {run}: inertia rose {} -> {}", w[0], w[1])
            })?;
        }
        iterations += model.inertia_history.len();
        if mode == ClusterMode::Baseline {
            for (pos, &i) in model.members.iter().enumerate() {
                if let Some(l) = instance.masks[i].label {
                    ensure(model.assignment[pos] == l, || {
                        format!(
                            "run {run}: labeled mask {i} moved to cluster {}",
                            model.assignment[pos]
                        )
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "100 fits, {iterations} assignment steps, inertia never rose"
    ))
}

// ---------------------------------------------------------------- codecs

fn codec_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tmp = dir.path();

    for case in 0..200 {
        let (h, w) = (rng.random_range(1..=20u32), rng.random_range(1..=20u32));
        let density = rng.random_range(0.0..1.0);
        let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
        let bitmap = Bitmap::from_row_major(h, w, bits);
        let rle = rle_encode(&bitmap).map_err(|e| e.to_string())?;
        let back = rle_decode(&rle).map_err(|e| e.to_string())?;
        ensure(back == bitmap, || {
            format!("rle case {case}: decode(encode(b)) != b")
        })?;
        let json = serde_json::to_string(&rle).unwrap();
        let again: RleMask = serde_json::from_str(&json).unwrap();
        ensure(serde_json::to_string(&again).unwrap() == json, || {
            format!("rle case {case}: json differs")
        })?;
    }

    for case in 0..10u64 {
        let spec = SynthSpec {
            k_base: 3,
            k_novel: 2,
            n_masks: rng.random_range(30..=120),
            masks_per_image: rng.random_range(3..=12),
            rng_seed: case,
            ..SynthSpec::default()
        };
        let data = synth::generate(&spec)?;
        let a = InstancePaths::in_dir(&tmp.join(format!("inst{case}a")), true);
        let b = InstancePaths::in_dir(&tmp.join(format!("inst{case}b")), true);
        mask_io::write_instance(&data.instance, &a).map_err(|e| e.to_string())?;
        let read = mask_io::read_instance(&a, 3, 2).map_err(|e| e.to_string())?;
        ensure(read == data.instance, || {
            format!("instance case {case}: read differs from written")
        })?;
        mask_io::write_instance(&read, &b).map_err(|e| e.to_string())?;
        for (x, y) in [
            (&a.records, &b.records),
            (&a.features_meta, &b.features_meta),
            (&a.features_bin, &b.features_bin),
        ] {
            ensure(same_bytes(x, y), || {
                format!("instance case {case}: {} differs", x.display())
            })?;
        }
        ensure(
            same_bytes(
                a.geometries.as_ref().unwrap(),
                b.geometries.as_ref().unwrap(),
            ),
            || format!("instance case {case}: geometries differ"),
        )?;
    }

    for case in 0..50 {
        let labels: Vec<LabelAssignment> = (0..rng.random_range(0..40u64))
            .map(|i| LabelAssignment {
                mask_id: i * 7 + rng.random_range(0..7),
                label: rng.random_range(0..30),
                confidence: rng.random_range(0.0..=1.0),
            })
            .collect();
        let (a, b) = (tmp.join("la.ndjson"), tmp.join("lb.ndjson"));
        mask_io::write_labels(&labels, &a).map_err(|e| e.to_string())?;
        let read = mask_io::read_labels(&a).map_err(|e| e.to_string())?;
        ensure(read == labels, || {
            format!("labels case {case}: values differ")
        })?;
        mask_io::write_labels(&read, &b).map_err(|e| e.to_string())?;
        ensure(same_bytes(&a, &b), || {
            format!("labels case {case}: bytes differ")
        })?;
    }

    for case in 0..100u64 {
        let (h, w) = (rng.random_range(1..=30u32), rng.random_range(1..=30u32));
        let map = SegmentationMap {
            image_id: case,
            height: h,
            width: w,
            labels: (0..h * w)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        VOID
                    } else {
                        rng.random_range(0..40)
                    }
                })
                .collect(),
        };
        let bytes = mask_io::encode_map(&map);
        let back =
            mask_io::decode_map(&bytes, case, Path::new("mem")).map_err(|e| e.to_string())?;
        ensure(back == map, || format!("map case {case}: values differ"))?;
        ensure(mask_io::encode_map(&back) == bytes, || {
            format!("map case {case}: bytes differ")
        })?;
    }
    Ok("200 RLE, 10 instances, 50 label files, 100 maps".into())
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        ("nerg", synth_config()),
        (
            "baseline",
            RunConfig {
                mode: Mode::Baseline,
                ..synth_config()
            },
        ),
    ];
    for (name, cfg) in &configs {
        let a = dir.path().join(format!("{name}_a"));
        let b = dir.path().join(format!("{name}_b"));
        pipeline::run_step(Step::Run, cfg, &a).map_err(|e| e.to_string())?;
        // Second run on a different thread count.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| pipeline::run_step(Step::Run, cfg, &b))
            .map_err(|e| e.to_string())?;
        for f in [LABELS, EVAL_REPORT] {
            ensure(same_bytes(&a.join(f), &b.join(f)), || {
                format!("{name}: {f} differs")
            })?;
        }
    }
    Ok("labels.ndjson and eval_report.json identical for nerg and baseline".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("hungarian equals exhaustive search", hungarian_oracle),
        ("knn equals brute force", knn_oracle),
        ("propagation chain hand oracle", propagation_chain),
        ("end-to-end synthetic discovery", end_to_end),
        ("ablation strictly increasing", ablation),
        ("parameter stability", parameter_stability),
        ("metric invariances", metric_invariances),
        ("k-means contract", kmeans_contract),
        ("codec round trips", codec_round_trips),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
