//! Shared domain types: mask records, problem instances, label state and
//! segmentation maps, plus instance validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mask_io::rle::RleMask;

/// Raster value for pixels excluded from evaluation.
pub const VOID: u16 = 65535;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
}

/// One mask proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub mask_id: u64,
    pub image_id: u64,
    /// Pixel count; also the mask's sample weight during clustering.
    pub area: u64,
    /// `(x, y, w, h)` in pixels.
    pub bbox: [u32; 4],
    /// Base-class index, present only for the labeled split.
    pub label: Option<u32>,
    pub split: Split,
    pub geometry: Option<RleMask>,
}

impl MaskRecord {
    pub fn weight(&self) -> f64 {
        self.area as f64
    }

    pub fn is_labeled(&self) -> bool {
        self.split == Split::Labeled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: u64,
    pub height: u32,
    pub width: u32,
}

/// Dense `rows × dim` matrix of f32 features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Panics if `data.len() != rows * dim`.
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * dim, "feature buffer is not rows*dim");
        Self { rows, dim, data }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data)
    }

    /// Copy with every row scaled to unit L2 norm; zero rows are left as is.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim.max(1)) {
            let norm = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = ((*v as f64) / norm) as f32;
                }
            }
        }
        Self::new(self.rows, self.dim, data)
    }
}

/// A complete discovery problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryInstance {
    pub masks: Vec<MaskRecord>,
    /// Row `i` belongs to `masks[i]`.
    pub features: FeatureMatrix,
    pub k_base: u32,
    pub k_novel: u32,
    pub images: Vec<ImageInfo>,
}

impl DiscoveryInstance {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Instance restricted to `indices` (in the given order). Images are kept.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
            features: self.features.select(indices),
            k_base: self.k_base,
            k_novel: self.k_novel,
            images: self.images.clone(),
        }
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.image_id == image_id)
    }
}

/// Per-mask pseudo-label during propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(u32),
    /// Not claimed by any base class; a novel-class candidate.
    NovelPending,
}

impl Label {
    pub fn class(self) -> Option<u32> {
        match self {
            Label::Class(c) => Some(c),
            Label::NovelPending => None,
        }
    }
}

/// Evolving labels and confidences, one entry per mask of an instance.
///
/// `fixed[i]` marks labeled-split masks, which carry their ground truth with
/// confidence 1 and are never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    pub k_base: u32,
    pub labels: Vec<Label>,
    pub confidence: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl LabelState {
    /// Labeled masks start at their label with p = 1, unlabeled masks pending with p = 0.
    pub fn initial(instance: &DiscoveryInstance) -> Self {
        let n = instance.len();
        let mut labels = Vec::with_capacity(n);
        let mut confidence = Vec::with_capacity(n);
        let mut fixed = Vec::with_capacity(n);
        for m in &instance.masks {
            match (m.split, m.label) {
                (Split::Labeled, Some(l)) => {
                    labels.push(Label::Class(l));
                    confidence.push(1.0);
                    fixed.push(true);
                }
                _ => {
                    labels.push(Label::NovelPending);
                    confidence.push(0.0);
                    fixed.push(false);
                }
            }
        }
        Self {
            k_base: instance.k_base,
            labels,
            confidence,
            fixed,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pending_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::NovelPending)
            .count()
    }
}

/// Dense per-image label raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub image_id: u64,
    pub height: u32,
    pub width: u32,
    pub labels: Vec<u16>,
}

impl SegmentationMap {
    pub fn filled(image_id: u64, height: u32, width: u32, value: u16) -> Self {
        Self {
            image_id,
            height,
            width,
            labels: vec![value; height as usize * width as usize],
        }
    }

    pub fn get(&self, y: u32, x: u32) -> u16 {
        self.labels[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    FeatureRowMismatch {
        masks: usize,
        rows: usize,
    },
    NonFiniteFeature {
        mask_id: u64,
        column: usize,
    },
    DuplicateMaskId {
        mask_id: u64,
    },
    LabeledWithoutLabel {
        mask_id: u64,
    },
    UnlabeledWithLabel {
        mask_id: u64,
        label: u32,
    },
    LabelOutOfRange {
        mask_id: u64,
        label: u32,
        k_base: u32,
    },
    ZeroArea {
        mask_id: u64,
    },
    InvalidGeometry {
        mask_id: u64,
        message: String,
    },
    AreaMismatch {
        mask_id: u64,
        area: u64,
        geometry_area: u64,
    },
    BBoxMismatch {
        mask_id: u64,
        bbox: [u32; 4],
        expected: Option<[u32; 4]>,
    },
    UnknownImage {
        mask_id: u64,
        image_id: u64,
    },
    GeometrySizeMismatch {
        mask_id: u64,
        image_id: u64,
        size: [u32; 2],
        image_size: [u32; 2],
    },
    Overlap {
        image_id: u64,
        first: u64,
        second: u64,
        x: u32,
        y: u32,
    },
    CoverageGap {
        image_id: u64,
        missing: u64,
        x: u32,
        y: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            FeatureRowMismatch { masks, rows } => {
                write!(f, "{masks} masks but {rows} feature rows")
            }
            NonFiniteFeature { mask_id, column } => {
                write!(f, "mask {mask_id}: non-finite feature at column {column}")
            }
            DuplicateMaskId { mask_id } => write!(f, "duplicate mask_id {mask_id}"),
            LabeledWithoutLabel { mask_id } => {
                write!(f, "mask {mask_id}: labeled split without a label")
            }
            UnlabeledWithLabel { mask_id, label } => {
                write!(f, "mask {mask_id}: unlabeled split carries label {label}")
            }
            LabelOutOfRange {
                mask_id,
                label,
                k_base,
            } => write!(f, "mask {mask_id}: label {label} not below k_base={k_base}"),
            ZeroArea { mask_id } => write!(f, "mask {mask_id}: zero area"),
            InvalidGeometry { mask_id, message } => write!(f, "mask {mask_id}: {message}"),
            AreaMismatch {
                mask_id,
                area,
                geometry_area,
            } => write!(f, "mask {mask_id}: area {area} but geometry has {geometry_area} pixels"),
            BBoxMismatch {
                mask_id,
                bbox,
                expected,
            } => write!(f, "mask {mask_id}: bbox {bbox:?}, geometry bounds {expected:?}"),
            UnknownImage { mask_id, image_id } => {
                write!(f, "mask {mask_id}: unknown image {image_id}")
            }
            GeometrySizeMismatch {
                mask_id,
                image_id,
                size,
                image_size,
            } => write!(
                f,
                "mask {mask_id}: geometry size {size:?} differs from image {image_id} size {image_size:?}"
            ),
            Overlap {
                image_id,
                first,
                second,
                x,
                y,
            } => write!(f, "image {image_id}: masks {first} and {second} overlap at ({x}, {y})"),
            CoverageGap {
                image_id,
                missing,
                x,
                y,
            } => write!(
                f,
                "image {image_id}: {missing} uncovered pixels, first at ({x}, {y})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Lists every invariant violation of `instance`. Coverage and disjointness
/// are checked only for images whose masks all carry geometry.
pub fn validate_instance(instance: &DiscoveryInstance) -> ValidationReport {
    let mut violations = Vec::new();
    let features = &instance.features;
    if features.rows() != instance.len() {
        violations.push(Violation::FeatureRowMismatch {
            masks: instance.len(),
            rows: features.rows(),
        });
    }

    let mut seen = BTreeSet::new();
    for (i, m) in instance.masks.iter().enumerate() {
        if !seen.insert(m.mask_id) {
            violations.push(Violation::DuplicateMaskId { mask_id: m.mask_id });
        }
        if i < features.rows() {
            if let Some(column) = features.row(i).iter().position(|v| !v.is_finite()) {
                violations.push(Violation::NonFiniteFeature {
                    mask_id: m.mask_id,
                    column,
                });
            }
        }
        match (m.split, m.label) {
            (Split::Labeled, None) => {
                violations.push(Violation::LabeledWithoutLabel { mask_id: m.mask_id })
            }
            (Split::Unlabeled, Some(label)) => violations.push(Violation::UnlabeledWithLabel {
                mask_id: m.mask_id,
                label,
            }),
            _ => {}
        }
        if let Some(label) = m.label {
            if label >= instance.k_base {
                violations.push(Violation::LabelOutOfRange {
                    mask_id: m.mask_id,
                    label,
                    k_base: instance.k_base,
                });
            }
        }
        if m.area == 0 {
            violations.push(Violation::ZeroArea { mask_id: m.mask_id });
        }
        if let Some(g) = &m.geometry {
            if let Err(e) = g.check() {
                violations.push(Violation::InvalidGeometry {
                    mask_id: m.mask_id,
                    message: e.to_string(),
                });
                continue;
            }
            let geometry_area = g.area();
            if geometry_area != m.area {
                violations.push(Violation::AreaMismatch {
                    mask_id: m.mask_id,
                    area: m.area,
                    geometry_area,
                });
            }
            let expected = g.bbox();
            if expected != Some(m.bbox) {
                violations.push(Violation::BBoxMismatch {
                    mask_id: m.mask_id,
                    bbox: m.bbox,
                    expected,
                });
            }
            match instance.image(m.image_id) {
                None => violations.push(Violation::UnknownImage {
                    mask_id: m.mask_id,
                    image_id: m.image_id,
                }),
                Some(im) if [im.height, im.width] != g.size => {
                    violations.push(Violation::GeometrySizeMismatch {
                        mask_id: m.mask_id,
                        image_id: m.image_id,
                        size: g.size,
                        image_size: [im.height, im.width],
                    })
                }
                Some(_) => {}
            }
        }
    }

    violations.extend(partition_violations(instance));
    ValidationReport { violations }
}

fn partition_violations(instance: &DiscoveryInstance) -> Vec<Violation> {
    let mut by_image: BTreeMap<u64, Vec<&MaskRecord>> = BTreeMap::new();
    for m in &instance.masks {
        by_image.entry(m.image_id).or_default().push(m);
    }
    let sizes: HashMap<u64, &ImageInfo> =
        instance.images.iter().map(|im| (im.image_id, im)).collect();

    let mut out = Vec::new();
    for (image_id, masks) in by_image {
        let Some(info) = sizes.get(&image_id) else {
            continue;
        };
        let usable = masks.iter().all(|m| {
            m.geometry
                .as_ref()
                .is_some_and(|g| g.size == [info.height, info.width] && g.check().is_ok())
        });
        if !usable {
            continue;
        }
        let (h, w) = (info.height as usize, info.width as usize);
        // Owner per pixel, stored as position + 1 in `masks`.
        let mut owner = vec![0u32; h * w];
        let mut reported = BTreeSet::new();
        for (pos, m) in masks.iter().enumerate() {
            let g = m.geometry.as_ref().expect("checked above");
            for (y, x) in g.pixels() {
                let slot = &mut owner[y as usize * w + x as usize];
                if *slot != 0 {
                    let first = masks[*slot as usize - 1].mask_id;
                    if reported.insert((first, m.mask_id)) {
                        out.push(Violation::Overlap {
                            image_id,
                            first,
                            second: m.mask_id,
                            x,
                            y,
                        });
                    }
                } else {
                    *slot = pos as u32 + 1;
                }
            }
        }
        let missing = owner.iter().filter(|&&o| o == 0).count() as u64;
        if missing > 0 {
            let first = owner.iter().position(|&o| o == 0).expect("missing > 0");
            out.push(Violation::CoverageGap {
                image_id,
                missing,
                x: (first % w) as u32,
                y: (first / w) as u32,
            });
        }
    }
    out
}
