//! Small-mask filling and segmentation-map assembly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::knn::squared_distance;
use crate::mask_io::rle::RleMask;
use crate::model::{DiscoveryInstance, ImageInfo, SegmentationMap};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssembleError {
    #[error("image {image_id}: pixel ({x}, {y}) covered by masks {first} and {second}")]
    Overlap {
        image_id: u64,
        x: u32,
        y: u32,
        first: u64,
        second: u64,
    },
    #[error("image {image_id}: pixel ({x}, {y}) not covered by any mask")]
    CoverageGap { image_id: u64, x: u32, y: u32 },
    #[error("image {image_id}: mask {mask_id} has size {size:?}, image is {height}x{width}")]
    SizeMismatch {
        image_id: u64,
        mask_id: u64,
        size: [u32; 2],
        height: u32,
        width: u32,
    },
    #[error("label {label} of mask {mask_id} does not fit a u16 raster")]
    LabelOverflow { mask_id: u64, label: u32 },
    #[error("no mask with area >= {threshold} to copy labels from")]
    NoDonor { threshold: u64 },
}

/// Label and confidence given to one mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskLabel {
    pub label: u32,
    pub confidence: f64,
}

/// Masks below the area threshold skip the neighbor graph and clustering.
pub fn is_small(instance: &DiscoveryInstance, i: usize, area_threshold: u64) -> bool {
    instance.masks[i].area < area_threshold
}

/// Gives every small mask (`None` entries with `area < area_threshold`) the
/// assignment of its nearest non-small mask in feature space, searching the
/// same image first and the whole instance when the image has none. Ties go
/// to the lower index.
///
/// Entries that are `None` but not small stay unresolved and are reported
/// as a `NoDonor` error only if nothing can be copied at all.
pub fn fill_small_masks(
    instance: &DiscoveryInstance,
    assignments: &[Option<MaskLabel>],
    area_threshold: u64,
) -> Result<Vec<Option<MaskLabel>>, AssembleError> {
    assert_eq!(assignments.len(), instance.len());
    let donor = |i: usize| instance.masks[i].area >= area_threshold && assignments[i].is_some();
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut all_donors = Vec::new();
    for i in 0..instance.len() {
        if donor(i) {
            by_image
                .entry(instance.masks[i].image_id)
                .or_default()
                .push(i);
            all_donors.push(i);
        }
    }

    let nearest = |i: usize, pool: &[usize]| -> Option<usize> {
        let f = instance.features.row(i);
        let mut best: Option<(usize, f64)> = None;
        for &j in pool {
            let d = squared_distance(f, instance.features.row(j));
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        best.map(|b| b.0)
    };

    let mut out = assignments.to_vec();
    for i in 0..instance.len() {
        if assignments[i].is_some() || instance.masks[i].area >= area_threshold {
            continue;
        }
        let local = by_image
            .get(&instance.masks[i].image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let pool = if local.is_empty() {
            &all_donors[..]
        } else {
            local
        };
        let j = nearest(i, pool).ok_or(AssembleError::NoDonor {
            threshold: area_threshold,
        })?;
        out[i] = assignments[j];
    }
    Ok(out)
}

/// One mask placed on an image.
#[derive(Debug, Clone, Copy)]
pub struct PlacedMask<'a> {
    pub mask_id: u64,
    pub geometry: &'a RleMask,
    pub label: u32,
}

/// Paints every mask with its label. Fails on the first doubly covered or
/// uncovered pixel (row-major scan for gaps).
pub fn assemble_map(
    image: &ImageInfo,
    masks: &[PlacedMask<'_>],
) -> Result<SegmentationMap, AssembleError> {
    let (h, w) = (image.height as usize, image.width as usize);
    let mut labels = vec![0u16; h * w];
    let mut owner: Vec<Option<u64>> = vec![None; h * w];
    for m in masks {
        if m.geometry.size != [image.height, image.width] {
            return Err(AssembleError::SizeMismatch {
                image_id: image.image_id,
                mask_id: m.mask_id,
                size: m.geometry.size,
                height: image.height,
                width: image.width,
            });
        }
        let label = u16::try_from(m.label)
            .ok()
            .filter(|&l| l != crate::model::VOID)
            .ok_or(AssembleError::LabelOverflow {
                mask_id: m.mask_id,
                label: m.label,
            })?;
        for (y, x) in m.geometry.pixels() {
            let idx = y as usize * w + x as usize;
            if let Some(first) = owner[idx] {
                return Err(AssembleError::Overlap {
                    image_id: image.image_id,
                    x,
                    y,
                    first,
                    second: m.mask_id,
                });
            }
            owner[idx] = Some(m.mask_id);
            labels[idx] = label;
        }
    }
    if let Some(idx) = owner.iter().position(Option::is_none) {
        return Err(AssembleError::CoverageGap {
            image_id: image.image_id,
            x: (idx % w) as u32,
            y: (idx / w) as u32,
        });
    }
    Ok(SegmentationMap {
        image_id: image.image_id,
        height: image.height,
        width: image.width,
        labels,
    })
}
