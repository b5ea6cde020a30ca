//! Run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::KMeansConfig;
use crate::eval::MatchStrategy;
use crate::mask_io::InstancePaths;
use crate::propagation::{PropagationConfig, ScoreNorm};
use crate::slic::SlicParams;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Propagation, structural completion, then novel-only clustering.
    #[default]
    Nerg,
    /// Constrained k-means over every mask.
    Baseline,
}

/// Input files. `instance_dir` stands for the conventional file names inside
/// it; explicit paths override them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub instance_dir: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub features_meta: Option<PathBuf>,
    pub features_bin: Option<PathBuf>,
    pub geometries: Option<PathBuf>,
    /// Directory of ground-truth `map_<id>.u16` files.
    pub gt_dir: Option<PathBuf>,
    /// Optional `ground_truth.ndjson` with a class per mask.
    pub ground_truth: Option<PathBuf>,
}

/// Superpixel input: `image_<id>.ppm` files segmented with SLIC.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicSource {
    pub images_dir: PathBuf,
    pub params: SlicParams,
    /// Ground-truth maps used to label the masks of `labeled_images` by
    /// majority vote and to score the run.
    pub gt_dir: Option<PathBuf>,
    pub labeled_images: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: Mode,
    /// Neighbors per mask.
    pub k: usize,
    pub theta: f64,
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub score_norm: ScoreNorm,
    pub label_propagation: bool,
    pub structural_completion: bool,
    pub k_base: u32,
    pub k_novel: u32,
    pub rng_seed: u64,
    pub max_lloyd_iters: usize,
    pub n_init: usize,
    pub freeze_base_centroids: bool,
    /// Masks with fewer pixels skip the neighbor graph and clustering.
    pub area_threshold: u64,
    pub normalize_features: bool,
    pub matching: MatchStrategy,
    pub paths: DataPaths,
    pub synth: Option<SynthSpec>,
    pub slic: Option<SlicSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PropagationConfig::default();
        let c = KMeansConfig::default();
        Self {
            run_id: "run".into(),
            mode: Mode::Nerg,
            k: 10,
            theta: p.theta,
            max_iterations: p.max_iterations,
            convergence_eps: p.convergence_eps,
            score_norm: p.score_norm,
            label_propagation: true,
            structural_completion: true,
            k_base: 0,
            k_novel: 0,
            rng_seed: c.rng_seed,
            max_lloyd_iters: c.max_lloyd_iters,
            n_init: c.n_init,
            freeze_base_centroids: c.freeze_base_centroids,
            area_threshold: 1024,
            normalize_features: false,
            matching: MatchStrategy::Hungarian,
            paths: DataPaths::default(),
            synth: None,
            slic: None,
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.instance_dir,
            &mut paths.records,
            &mut paths.features_meta,
            &mut paths.features_bin,
            &mut paths.geometries,
            &mut paths.gt_dir,
            &mut paths.ground_truth,
        ] {
            fix(p);
        }
        if let Some(s) = &mut self.slic {
            if s.images_dir.is_relative() {
                s.images_dir = base.join(&s.images_dir);
            }
            fix(&mut s.gt_dir);
        }
    }

    /// Class counts, taken from the synthetic spec when one is given.
    pub fn class_counts(&self) -> (u32, u32) {
        match &self.synth {
            Some(s) if self.k_base == 0 && self.k_novel == 0 => (s.k_base, s.k_novel),
            _ => (self.k_base, self.k_novel),
        }
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            theta: self.theta,
            max_iterations: self.max_iterations,
            convergence_eps: self.convergence_eps,
            score_norm: self.score_norm,
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k_novel: self.class_counts().1 as usize,
            rng_seed: self.rng_seed,
            max_lloyd_iters: self.max_lloyd_iters,
            n_init: self.n_init,
            freeze_base_centroids: self.freeze_base_centroids,
        }
    }

    /// File locations of an on-disk instance.
    pub fn instance_paths(&self) -> Result<InstancePaths, String> {
        let p = &self.paths;
        let dir = p.instance_dir.as_deref();
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
            explicit.clone().or_else(|| dir.map(|d| d.join(name)))
        };
        let need =
            |v: Option<PathBuf>, what: &str| v.ok_or_else(|| format!("paths.{what} is not set"));
        let geometries = pick(&p.geometries, "geometries.ndjson")
            .filter(|g| p.geometries.is_some() || g.exists());
        Ok(InstancePaths {
            records: need(pick(&p.records, "records.ndjson"), "records")?,
            features_meta: need(
                pick(&p.features_meta, "features.meta.json"),
                "features_meta",
            )?,
            features_bin: need(pick(&p.features_bin, "features.f32"), "features_bin")?,
            geometries,
        })
    }

    /// Checks value ranges and that referenced inputs exist.
    pub fn check(&self) -> Result<(), String> {
        self.propagation().check()?;
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.n_init == 0 || self.max_lloyd_iters == 0 {
            return Err("n_init and max_lloyd_iters must be at least 1".into());
        }
        let (kb, kn) = self.class_counts();
        if kb == 0 {
            return Err("k_base must be at least 1".into());
        }
        if kb as u64 + kn as u64 >= crate::model::VOID as u64 {
            return Err(format!("{} classes do not fit a u16 raster", kb + kn));
        }
        if self.synth.is_some() as u8 + self.slic.is_some() as u8 > 1 {
            return Err("synth and slic inputs are mutually exclusive".into());
        }
        if let Some(s) = &self.synth {
            s.check()?;
            if (kb, kn) != (s.k_base, s.k_novel) {
                return Err("k_base/k_novel disagree with the synth spec".into());
            }
        }
        let mut must_exist: Vec<PathBuf> = Vec::new();
        if let Some(s) = &self.slic {
            must_exist.push(s.images_dir.clone());
            must_exist.extend(s.gt_dir.clone());
        } else if self.synth.is_none() {
            let p = self.instance_paths()?;
            must_exist.push(p.records);
            must_exist.push(p.features_meta);
            must_exist.extend(p.geometries);
        }
        must_exist.extend(self.paths.gt_dir.clone());
        must_exist.extend(self.paths.ground_truth.clone());
        for p in must_exist {
            if !p.exists() {
                return Err(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
