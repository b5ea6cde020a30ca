//! Stage orchestration: ingest, validate, neighbor graph, propagation,
//! structural completion, clustering, small-mask filling, map assembly and
//! evaluation.
//!
//! Every stage is available in memory and as a file-to-file step so that
//! runs can be resumed or diffed stage by stage. Running the steps one by
//! one produces the same bytes as a full run.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{self, ClusterError, ClusterMode, ClusterModel};
use crate::config::{Mode, RunConfig, SlicSource};
use crate::eval::{
    assemble_map, evaluate, fill_small_masks, AssembleError, ClassSpace, EvalError, EvalReport,
    MaskLabel, PlacedMask,
};
use crate::knn::{self, KnnError, NeighborTable};
use crate::mask_io::{self, LabelAssignment, MaskIoError};
use crate::model::{
    validate_instance, DiscoveryInstance, FeatureMatrix, Label, LabelState, SegmentationMap, Split,
    VOID,
};
use crate::propagation::{self, PropagationOutcome};
use crate::slic::{self, SlicError};
use crate::synth::{self, adjusted_rand_index, clustering_accuracy, TruthLine};

pub const KNN_CACHE: &str = "knn.cache";
pub const STATE_PROPAGATED: &str = "state_propagated.ndjson";
pub const STATE_COMPLETED: &str = "state_completed.ndjson";
pub const LABELS: &str = "labels.ndjson";
pub const MAPS_DIR: &str = "maps";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Validate,
    Knn,
    Propagate,
    Complete,
    Cluster,
    Fill,
    Assemble,
    Eval,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Validate => "validate",
            Stage::Knn => "knn",
            Stage::Propagate => "propagate",
            Stage::Complete => "complete",
            Stage::Cluster => "cluster",
            Stage::Fill => "fill",
            Stage::Assemble => "assemble",
            Stage::Eval => "eval",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    MaskIo(#[from] MaskIoError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Slic(#[from] SlicError),
    #[error("invalid instance:\n{0}")]
    Invalid(String),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    /// Process exit status: 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Config(_) => None,
            PipelineError::Stage { stage, .. } => Some(*stage),
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

fn data_error(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: StageError::Data(message.into()),
    }
}

/// Instance plus whatever ground truth came with it.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub instance: DiscoveryInstance,
    pub gt_maps: Option<Vec<SegmentationMap>>,
    /// Class of every mask in instance order.
    pub ground_truth: Option<Vec<u32>>,
}

/// Reads or generates the instance and validates it.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    cfg.check().map_err(PipelineError::Config)?;
    let (k_base, k_novel) = cfg.class_counts();
    let mut inputs = if let Some(spec) = &cfg.synth {
        let data = synth::generate(spec).map_err(PipelineError::Config)?;
        Inputs {
            instance: data.instance,
            gt_maps: Some(data.gt_maps),
            ground_truth: Some(data.ground_truth),
        }
    } else if let Some(src) = &cfg.slic {
        slic_inputs(src, k_base, k_novel)?
    } else {
        let paths = cfg.instance_paths().map_err(PipelineError::Config)?;
        let instance =
            mask_io::read_instance(&paths, k_base, k_novel).map_err(at(Stage::Ingest))?;
        Inputs {
            instance,
            gt_maps: None,
            ground_truth: None,
        }
    };
    if let Some(dir) = &cfg.paths.gt_dir {
        inputs.gt_maps = Some(mask_io::read_maps(dir).map_err(at(Stage::Ingest))?);
    }
    if let Some(path) = &cfg.paths.ground_truth {
        inputs.ground_truth = Some(read_ground_truth(&inputs.instance, path)?);
    }
    let report = validate_instance(&inputs.instance);
    if !report.is_valid() {
        return Err(PipelineError::Stage {
            stage: Stage::Validate,
            source: StageError::Invalid(report.to_string()),
        });
    }
    Ok(inputs)
}

fn read_ground_truth(instance: &DiscoveryInstance, path: &Path) -> Result<Vec<u32>, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| at(Stage::Ingest)(MaskIoError::io(path, e)))?;
    let mut by_id = HashMap::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let t: TruthLine = serde_json::from_str(line)
            .map_err(|e| data_error(Stage::Ingest, format!("{}:{}: {e}", path.display(), n + 1)))?;
        by_id.insert(t.mask_id, t.label);
    }
    instance
        .masks
        .iter()
        .map(|m| {
            by_id.get(&m.mask_id).copied().ok_or_else(|| {
                data_error(
                    Stage::Ingest,
                    format!("{}: no entry for mask {}", path.display(), m.mask_id),
                )
            })
        })
        .collect()
}

fn slic_inputs(src: &SlicSource, k_base: u32, k_novel: u32) -> Result<Inputs, PipelineError> {
    let entries = std::fs::read_dir(&src.images_dir)
        .map_err(|e| at(Stage::Ingest)(MaskIoError::io(&src.images_dir, e)))?;
    let mut images: BTreeMap<u64, PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| at(Stage::Ingest)(MaskIoError::io(&src.images_dir, e)))?;
        let name = entry.file_name();
        if let Some(id) = name
            .to_str()
            .and_then(|n| n.strip_prefix("image_"))
            .and_then(|n| n.strip_suffix(".ppm"))
            .and_then(|n| n.parse::<u64>().ok())
        {
            images.insert(id, entry.path());
        }
    }
    if images.is_empty() {
        return Err(data_error(
            Stage::Ingest,
            format!("no image_<id>.ppm in {}", src.images_dir.display()),
        ));
    }
    let mut masks = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut infos = Vec::new();
    let mut gt_maps = Vec::new();
    for (&image_id, path) in &images {
        let image = slic::read_ppm(path).map_err(at(Stage::Ingest))?;
        let (mut records, features) =
            slic::segment_image(&image, image_id, masks.len() as u64, &src.params)
                .map_err(at(Stage::Ingest))?;
        let labeled = src.labeled_images.contains(&image_id);
        if let Some(dir) = &src.gt_dir {
            let gt = mask_io::read_map(&dir.join(mask_io::map_file_name(image_id)), image_id)
                .map_err(at(Stage::Ingest))?;
            if (gt.height, gt.width) != (image.height, image.width) {
                return Err(data_error(
                    Stage::Ingest,
                    format!("ground truth of image {image_id} has the wrong size"),
                ));
            }
            if labeled {
                for r in &mut records {
                    let geometry = r.geometry.as_ref().expect("segment_image sets geometry");
                    if let Some(c) = majority_label(&gt, geometry).filter(|&c| (c as u32) < k_base)
                    {
                        r.label = Some(c as u32);
                        r.split = Split::Labeled;
                    }
                }
            } else {
                gt_maps.push(gt);
            }
        } else if labeled {
            return Err(data_error(
                Stage::Ingest,
                "labeled_images needs slic.gt_dir",
            ));
        }
        rows.extend((0..features.rows()).map(|i| features.row(i).to_vec()));
        masks.extend(records);
        infos.push(crate::model::ImageInfo {
            image_id,
            height: image.height,
            width: image.width,
        });
    }
    Ok(Inputs {
        instance: DiscoveryInstance {
            masks,
            features: FeatureMatrix::from_rows(5, &rows),
            k_base,
            k_novel,
            images: infos,
        },
        gt_maps: src.gt_dir.is_some().then_some(gt_maps),
        ground_truth: None,
    })
}

/// Most frequent non-VOID ground-truth value under a mask, lowest on ties.
fn majority_label(gt: &SegmentationMap, geometry: &crate::mask_io::rle::RleMask) -> Option<u16> {
    let mut votes: BTreeMap<u16, u64> = BTreeMap::new();
    for (y, x) in geometry.pixels() {
        let v = gt.get(y, x);
        if v != VOID {
            *votes.entry(v).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .fold(None, |best: Option<(u16, u64)>, (c, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((c, n)),
        })
        .map(|b| b.0)
}

/// The masks that take part in the neighbor graph and clustering.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Instance indices of the active masks.
    pub active: Vec<usize>,
    /// Instance restricted to `active`, features normalized if configured.
    pub sub: DiscoveryInstance,
}

impl Prepared {
    pub fn mask_ids(&self) -> Vec<u64> {
        self.sub.masks.iter().map(|m| m.mask_id).collect()
    }
}

pub fn prepare(instance: &DiscoveryInstance, cfg: &RunConfig) -> Prepared {
    let active: Vec<usize> = (0..instance.len())
        .filter(|&i| instance.masks[i].area >= cfg.area_threshold)
        .collect();
    let mut sub = instance.subset(&active);
    if cfg.normalize_features {
        sub.features = sub.features.l2_normalized();
    }
    Prepared { active, sub }
}

pub fn knn_stage(prepared: &Prepared, cfg: &RunConfig) -> Result<NeighborTable, PipelineError> {
    knn::build_neighbor_table(&prepared.sub.features, cfg.k).map_err(at(Stage::Knn))
}

/// Propagation rounds, or the initial state when propagation is off.
pub fn propagate_stage(
    prepared: &Prepared,
    table: &NeighborTable,
    cfg: &RunConfig,
) -> PropagationOutcome {
    let initial = LabelState::initial(&prepared.sub);
    if !cfg.label_propagation {
        return PropagationOutcome {
            state: initial,
            rounds: 0,
            converged: true,
        };
    }
    propagation::propagate(&initial, table, &cfg.propagation())
}

pub fn complete_stage(table: &NeighborTable, state: &LabelState, cfg: &RunConfig) -> LabelState {
    if cfg.structural_completion {
        propagation::structural_completion(state, table, &cfg.propagation())
    } else {
        state.clone()
    }
}

/// Clusters the active masks and gives each of them a final label.
///
/// Novel clusters are numbered from `k_base`. Labeled masks and fitted
/// clusters carry confidence 1; base pseudo-labels keep their propagated
/// confidence.
pub fn cluster_stage(
    prepared: &Prepared,
    state: &LabelState,
    cfg: &RunConfig,
) -> Result<(ClusterModel, Vec<MaskLabel>), PipelineError> {
    let sub = &prepared.sub;
    let k_base = sub.k_base;
    let kmeans = cfg.kmeans();
    let (model, state) = match cfg.mode {
        Mode::Nerg => (
            clustering::fit(sub, state, ClusterMode::NovelOnly, &kmeans),
            state.clone(),
        ),
        Mode::Baseline => {
            let initial = LabelState::initial(sub);
            (
                clustering::fit(sub, &initial, ClusterMode::Baseline, &kmeans),
                initial,
            )
        }
    };
    let model = model.map_err(at(Stage::Cluster))?;
    let mut cluster_of = vec![None; sub.len()];
    for (&i, &c) in model.members.iter().zip(&model.assignment) {
        cluster_of[i] = Some(c);
    }
    let labels = (0..sub.len())
        .map(|i| {
            let one = |label| MaskLabel {
                label,
                confidence: 1.0,
            };
            if state.fixed[i] {
                return Ok(one(state.labels[i]
                    .class()
                    .expect("labeled masks carry a class")));
            }
            match (cfg.mode, state.labels[i], cluster_of[i]) {
                (Mode::Nerg, Label::Class(c), _) => Ok(MaskLabel {
                    label: c,
                    confidence: state.confidence[i],
                }),
                (Mode::Nerg, Label::NovelPending, Some(c)) => Ok(one(k_base + c)),
                (Mode::Baseline, _, Some(c)) => Ok(one(c)),
                _ => Err(data_error(
                    Stage::Cluster,
                    format!("mask {} was not clustered", sub.masks[i].mask_id),
                )),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok((model, labels))
}

/// Spreads active labels back to the full instance and fills small masks.
pub fn fill_stage(
    instance: &DiscoveryInstance,
    prepared: &Prepared,
    active_labels: &[MaskLabel],
    cfg: &RunConfig,
) -> Result<Vec<MaskLabel>, PipelineError> {
    let mut labels: Vec<Option<MaskLabel>> = instance
        .masks
        .iter()
        .map(|m| {
            m.label.filter(|_| m.is_labeled()).map(|label| MaskLabel {
                label,
                confidence: 1.0,
            })
        })
        .collect();
    for (&i, &l) in prepared.active.iter().zip(active_labels) {
        labels[i] = Some(l);
    }
    let filled =
        fill_small_masks(instance, &labels, cfg.area_threshold).map_err(at(Stage::Fill))?;
    filled
        .into_iter()
        .zip(&instance.masks)
        .map(|(l, m)| {
            l.ok_or_else(|| data_error(Stage::Fill, format!("mask {} has no label", m.mask_id)))
        })
        .collect()
}

/// One map per image whose masks all carry geometry.
pub fn assemble_stage(
    instance: &DiscoveryInstance,
    labels: &[MaskLabel],
) -> Result<Vec<SegmentationMap>, PipelineError> {
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, m) in instance.masks.iter().enumerate() {
        by_image.entry(m.image_id).or_default().push(i);
    }
    let mut maps = Vec::new();
    for image in &instance.images {
        let Some(members) = by_image.get(&image.image_id) else {
            continue;
        };
        if members
            .iter()
            .any(|&i| instance.masks[i].geometry.is_none())
        {
            continue;
        }
        let placed: Vec<PlacedMask<'_>> = members
            .iter()
            .map(|&i| PlacedMask {
                mask_id: instance.masks[i].mask_id,
                geometry: instance.masks[i].geometry.as_ref().expect("checked above"),
                label: labels[i].label,
            })
            .collect();
        maps.push(assemble_map(image, &placed).map_err(at(Stage::Assemble))?);
    }
    Ok(maps)
}

/// Mask-level scores against per-mask ground truth, over the unlabeled split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryScores {
    /// Share of ground-truth novel masks whose predicted novel cluster is
    /// matched to their class.
    pub novel_accuracy: f64,
    pub adjusted_rand_index: f64,
    pub unlabeled_masks: usize,
}

pub fn discovery_scores(
    instance: &DiscoveryInstance,
    truth: &[u32],
    labels: &[MaskLabel],
) -> DiscoveryScores {
    let k_base = instance.k_base;
    let unlabeled: Vec<usize> = (0..instance.len())
        .filter(|&i| !instance.masks[i].is_labeled())
        .collect();
    let novel: Vec<usize> = unlabeled
        .iter()
        .copied()
        .filter(|&i| truth[i] >= k_base)
        .collect();
    let novel_truth: Vec<u32> = novel.iter().map(|&i| truth[i]).collect();
    let novel_pred: Vec<Option<u32>> = novel
        .iter()
        .map(|&i| Some(labels[i].label).filter(|&l| l >= k_base))
        .collect();
    let a: Vec<u32> = unlabeled.iter().map(|&i| truth[i]).collect();
    let b: Vec<u32> = unlabeled.iter().map(|&i| labels[i].label).collect();
    DiscoveryScores {
        novel_accuracy: clustering_accuracy(&novel_truth, &novel_pred),
        adjusted_rand_index: adjusted_rand_index(&a, &b),
        unlabeled_masks: unlabeled.len(),
    }
}

/// Contents of `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub config_hash: String,
    pub area_threshold: u64,
    #[serde(flatten)]
    pub eval: EvalReport,
    pub discovery: Option<DiscoveryScores>,
    pub config: RunConfig,
}

pub fn eval_stage(
    pred_maps: &[SegmentationMap],
    gt_maps: &[SegmentationMap],
    cfg: &RunConfig,
) -> Result<EvalReport, PipelineError> {
    let (k_base, k_novel) = cfg.class_counts();
    let classes = ClassSpace::contiguous(k_base as u16, k_novel as u16, k_novel as u16);
    evaluate(pred_maps, gt_maps, &classes, cfg.matching).map_err(at(Stage::Eval))
}

pub fn build_report(
    cfg: &RunConfig,
    eval: EvalReport,
    discovery: Option<DiscoveryScores>,
) -> RunReport {
    RunReport {
        run_id: cfg.run_id.clone(),
        config_hash: cfg.hash(),
        area_threshold: cfg.area_threshold,
        eval,
        discovery,
        config: cfg.clone(),
    }
}

/// Everything a full run computes.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub table: NeighborTable,
    pub propagation: PropagationOutcome,
    pub completed: LabelState,
    pub clusters: ClusterModel,
    /// Final label of every mask, in instance order.
    pub labels: Vec<MaskLabel>,
    pub maps: Vec<SegmentationMap>,
    pub report: Option<RunReport>,
}

/// Full run on already loaded inputs.
pub fn run_in_memory(cfg: &RunConfig, inputs: &Inputs) -> Result<RunOutput, PipelineError> {
    let instance = &inputs.instance;
    let prepared = prepare(instance, cfg);
    let table = knn_stage(&prepared, cfg)?;
    let (propagation, completed) = match cfg.mode {
        Mode::Nerg => {
            let p = propagate_stage(&prepared, &table, cfg);
            let c = complete_stage(&table, &p.state, cfg);
            (p, c)
        }
        Mode::Baseline => {
            let initial = LabelState::initial(&prepared.sub);
            (
                PropagationOutcome {
                    state: initial.clone(),
                    rounds: 0,
                    converged: true,
                },
                initial,
            )
        }
    };
    let (clusters, active_labels) = cluster_stage(&prepared, &completed, cfg)?;
    let labels = fill_stage(instance, &prepared, &active_labels, cfg)?;
    let maps = assemble_stage(instance, &labels)?;
    let report = match &inputs.gt_maps {
        Some(gt) => {
            let eval = eval_stage(&maps, gt, cfg)?;
            let discovery = inputs
                .ground_truth
                .as_ref()
                .map(|t| discovery_scores(instance, t, &labels));
            Some(build_report(cfg, eval, discovery))
        }
        None => None,
    };
    Ok(RunOutput {
        prepared,
        table,
        propagation,
        completed,
        clusters,
        labels,
        maps,
        report,
    })
}

// ---- On-disk stage artifacts ----

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| at(Stage::Output)(MaskIoError::io(parent, e)))?;
    }
    std::fs::write(path, bytes).map_err(|e| at(Stage::Output)(MaskIoError::io(path, e)))
}

pub fn write_state_file(
    prepared: &Prepared,
    state: &LabelState,
    stage: &str,
    path: &Path,
) -> Result<(), PipelineError> {
    mask_io::write_state(
        &prepared.mask_ids(),
        &state.labels,
        &state.confidence,
        stage,
        path,
    )
    .map_err(at(Stage::Output))
}

/// Rebuilds a label state written by [`write_state_file`] for the same
/// active masks.
pub fn read_state_file(
    prepared: &Prepared,
    path: &Path,
    stage: Stage,
) -> Result<LabelState, PipelineError> {
    let lines = mask_io::read_state(path).map_err(at(stage))?;
    let sub = &prepared.sub;
    if lines.len() != sub.len()
        || lines
            .iter()
            .zip(&sub.masks)
            .any(|(l, m)| l.mask_id != m.mask_id)
    {
        return Err(data_error(
            stage,
            format!(
                "{} does not match the active masks of this instance",
                path.display()
            ),
        ));
    }
    let mut state = LabelState::initial(sub);
    for (i, line) in lines.into_iter().enumerate() {
        if state.fixed[i] {
            continue;
        }
        if let Some(c) = line.label.filter(|&c| c >= sub.k_base) {
            return Err(data_error(
                stage,
                format!("mask {}: label {c} is not a base class", line.mask_id),
            ));
        }
        state.labels[i] = line.label.map_or(Label::NovelPending, Label::Class);
        state.confidence[i] = line.confidence;
    }
    Ok(state)
}

pub fn write_labels_file(
    instance: &DiscoveryInstance,
    labels: &[MaskLabel],
    path: &Path,
) -> Result<(), PipelineError> {
    let rows: Vec<LabelAssignment> = instance
        .masks
        .iter()
        .zip(labels)
        .map(|(m, l)| LabelAssignment {
            mask_id: m.mask_id,
            label: l.label,
            confidence: l.confidence,
        })
        .collect();
    mask_io::write_labels(&rows, path).map_err(at(Stage::Output))
}

pub fn read_labels_file(
    instance: &DiscoveryInstance,
    path: &Path,
    stage: Stage,
) -> Result<Vec<MaskLabel>, PipelineError> {
    let rows = mask_io::read_labels(path).map_err(at(stage))?;
    let by_id: HashMap<u64, LabelAssignment> = rows.into_iter().map(|r| (r.mask_id, r)).collect();
    instance
        .masks
        .iter()
        .map(|m| {
            by_id
                .get(&m.mask_id)
                .map(|r| MaskLabel {
                    label: r.label,
                    confidence: r.confidence,
                })
                .ok_or_else(|| {
                    data_error(
                        stage,
                        format!("{}: no label for mask {}", path.display(), m.mask_id),
                    )
                })
        })
        .collect()
}

pub fn report_json(report: &RunReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// `manifest.json`: run id, config hash and a SHA-256 per artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

/// Records the hashes of `files` (relative to `out_dir`) in the manifest,
/// starting over when the existing one belongs to another config.
pub fn update_manifest(
    cfg: &RunConfig,
    out_dir: &Path,
    files: &[String],
) -> Result<(), PipelineError> {
    let path = out_dir.join(MANIFEST);
    let config_hash = cfg.hash();
    let mut manifest = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
        .filter(|m| m.config_hash == config_hash && m.run_id == cfg.run_id)
        .unwrap_or(Manifest {
            run_id: cfg.run_id.clone(),
            config_hash,
            artifacts: BTreeMap::new(),
        });
    for f in files {
        let full = out_dir.join(f);
        let bytes =
            std::fs::read(&full).map_err(|e| at(Stage::Output)(MaskIoError::io(&full, e)))?;
        manifest
            .artifacts
            .insert(f.clone(), hex::encode(Sha256::digest(&bytes)));
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_bytes(&path, &bytes)
}

/// One pipeline step as run from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Every stage in order.
    Run,
    Validate,
    Knn,
    Propagate,
    Complete,
    Cluster,
    Assemble,
    Eval,
}

fn load_table(
    prepared: &Prepared,
    cfg: &RunConfig,
    out_dir: &Path,
    stage: Stage,
) -> Result<NeighborTable, PipelineError> {
    let path = out_dir.join(KNN_CACHE);
    if path.exists() {
        let table = knn::read_cache(&path).map_err(at(stage))?;
        if table.len() != prepared.sub.len() || table.k() != cfg.k {
            return Err(data_error(
                stage,
                format!("{} was built for another instance or k", path.display()),
            ));
        }
        Ok(table)
    } else {
        knn_stage(prepared, cfg)
    }
}

fn map_paths(maps: &[SegmentationMap]) -> Vec<String> {
    maps.iter()
        .map(|m| format!("{MAPS_DIR}/{}", mask_io::map_file_name(m.image_id)))
        .collect()
}

/// Runs `step` from on-disk inputs and artifacts in `out_dir`, writes its
/// outputs there and returns their paths relative to `out_dir`.
pub fn run_step(step: Step, cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>, PipelineError> {
    let inputs = load_inputs(cfg)?;
    let instance = &inputs.instance;
    let mut written: Vec<String> = Vec::new();
    match step {
        Step::Validate => {}
        Step::Run => {
            let out = run_in_memory(cfg, &inputs)?;
            write_bytes(&out_dir.join(KNN_CACHE), &knn::encode_cache(&out.table))?;
            written.push(KNN_CACHE.into());
            if cfg.mode == Mode::Nerg {
                write_state_file(
                    &out.prepared,
                    &out.propagation.state,
                    "propagate",
                    &out_dir.join(STATE_PROPAGATED),
                )?;
                write_state_file(
                    &out.prepared,
                    &out.completed,
                    "complete",
                    &out_dir.join(STATE_COMPLETED),
                )?;
                written.push(STATE_PROPAGATED.into());
                written.push(STATE_COMPLETED.into());
            }
            write_labels_file(instance, &out.labels, &out_dir.join(LABELS))?;
            written.push(LABELS.into());
            mask_io::write_maps(&out.maps, &out_dir.join(MAPS_DIR)).map_err(at(Stage::Output))?;
            written.extend(map_paths(&out.maps));
            if let Some(report) = &out.report {
                write_bytes(&out_dir.join(EVAL_REPORT), &report_json(report))?;
                written.push(EVAL_REPORT.into());
            }
        }
        Step::Knn => {
            let prepared = prepare(instance, cfg);
            let table = knn_stage(&prepared, cfg)?;
            write_bytes(&out_dir.join(KNN_CACHE), &knn::encode_cache(&table))?;
            written.push(KNN_CACHE.into());
        }
        Step::Propagate => {
            let prepared = prepare(instance, cfg);
            let table = load_table(&prepared, cfg, out_dir, Stage::Propagate)?;
            let outcome = propagate_stage(&prepared, &table, cfg);
            write_state_file(
                &prepared,
                &outcome.state,
                "propagate",
                &out_dir.join(STATE_PROPAGATED),
            )?;
            written.push(STATE_PROPAGATED.into());
        }
        Step::Complete => {
            let prepared = prepare(instance, cfg);
            let table = load_table(&prepared, cfg, out_dir, Stage::Complete)?;
            let state =
                read_state_file(&prepared, &out_dir.join(STATE_PROPAGATED), Stage::Complete)?;
            let completed = complete_stage(&table, &state, cfg);
            write_state_file(
                &prepared,
                &completed,
                "complete",
                &out_dir.join(STATE_COMPLETED),
            )?;
            written.push(STATE_COMPLETED.into());
        }
        Step::Cluster => {
            let prepared = prepare(instance, cfg);
            let state = match cfg.mode {
                Mode::Nerg => {
                    read_state_file(&prepared, &out_dir.join(STATE_COMPLETED), Stage::Cluster)?
                }
                Mode::Baseline => LabelState::initial(&prepared.sub),
            };
            let (_, active_labels) = cluster_stage(&prepared, &state, cfg)?;
            let labels = fill_stage(instance, &prepared, &active_labels, cfg)?;
            write_labels_file(instance, &labels, &out_dir.join(LABELS))?;
            written.push(LABELS.into());
        }
        Step::Assemble => {
            let labels = read_labels_file(instance, &out_dir.join(LABELS), Stage::Assemble)?;
            let maps = assemble_stage(instance, &labels)?;
            mask_io::write_maps(&maps, &out_dir.join(MAPS_DIR)).map_err(at(Stage::Output))?;
            written.extend(map_paths(&maps));
        }
        Step::Eval => {
            let gt = inputs.gt_maps.as_ref().ok_or_else(|| {
                PipelineError::Config("eval needs ground-truth maps (paths.gt_dir)".into())
            })?;
            let maps = mask_io::read_maps(&out_dir.join(MAPS_DIR)).map_err(at(Stage::Eval))?;
            let eval = eval_stage(&maps, gt, cfg)?;
            let labels_path = out_dir.join(LABELS);
            let discovery = match (&inputs.ground_truth, labels_path.exists()) {
                (Some(truth), true) => {
                    let labels = read_labels_file(instance, &labels_path, Stage::Eval)?;
                    Some(discovery_scores(instance, truth, &labels))
                }
                _ => None,
            };
            write_bytes(
                &out_dir.join(EVAL_REPORT),
                &report_json(&build_report(cfg, eval, discovery)),
            )?;
            written.push(EVAL_REPORT.into());
        }
    }
    if !written.is_empty() {
        update_manifest(cfg, out_dir, &written)?;
    }
    Ok(written)
}
