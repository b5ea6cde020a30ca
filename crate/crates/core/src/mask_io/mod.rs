//! Interchange files between feature producers and the engine.
//!
//! | file                 | content                                              |
//! |----------------------|------------------------------------------------------|
//! | `records.ndjson`     | one mask record per line                             |
//! | `features.meta.json` | `{"n":..,"d":..}`                                    |
//! | `features.f32`       | `n*d` little-endian f32, row-major                   |
//! | `geometries.ndjson`  | optional, `{"mask_id":..,"size":[h,w],"counts":[..]}` |
//! | `labels.ndjson`      | output, `{"mask_id":..,"label":..,"confidence":..}`  |
//! | `map_<id>.u16`       | 16-byte header then row-major little-endian u16      |

pub mod rle;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    DiscoveryInstance, FeatureMatrix, ImageInfo, Label, MaskRecord, SegmentationMap, Split,
};
use rle::{RleError, RleMask};

pub const MAP_MAGIC: &[u8; 4] = b"GCDM";
pub const MAP_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(
        "features: meta declares n={n}, d={d} ({expected} bytes) but binary has {actual} bytes"
    )]
    DimensionMismatch {
        n: usize,
        d: usize,
        expected: u64,
        actual: u64,
    },
    #[error("features: {rows} rows for {records} records")]
    RecordCountMismatch { records: usize, rows: usize },
    #[error("geometry for unknown mask_id {mask_id}")]
    DanglingGeometry { mask_id: u64 },
    #[error("duplicate mask_id {mask_id}")]
    DuplicateMaskId { mask_id: u64 },
    #[error(transparent)]
    Rle(#[from] RleError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl MaskIoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        MaskIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, line: usize, message: impl Into<String>) -> Self {
        MaskIoError::Format {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MaskIoError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    mask_id: u64,
    image_id: u64,
    area: u64,
    bbox: [u32; 4],
    label: Option<u32>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryLine {
    mask_id: u64,
    size: [u32; 2],
    counts: Vec<u32>,
}

/// Output assignment of one mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelAssignment {
    pub mask_id: u64,
    pub label: u32,
    pub confidence: f64,
}

/// Intermediate propagation state for one mask; `label: None` is pending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateLine {
    pub mask_id: u64,
    pub label: Option<u32>,
    pub confidence: f64,
    pub stage: String,
}

/// Locations of the files that make up an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePaths {
    pub records: PathBuf,
    pub features_meta: PathBuf,
    pub features_bin: PathBuf,
    #[serde(default)]
    pub geometries: Option<PathBuf>,
}

impl InstancePaths {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path, with_geometries: bool) -> Self {
        Self {
            records: dir.join("records.ndjson"),
            features_meta: dir.join("features.meta.json"),
            features_bin: dir.join("features.f32"),
            geometries: with_geometries.then(|| dir.join("geometries.ndjson")),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| MaskIoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MaskIoError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| MaskIoError::io(path, e))
}

/// Parses one JSON object per non-empty line; line numbers are 1-based.
fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| MaskIoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| MaskIoError::format(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn write_ndjson<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| MaskIoError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| MaskIoError::io(path, e))?;
    }
    w.flush().map_err(|e| MaskIoError::io(path, e))
}

pub fn read_features(meta_path: &Path, bin_path: &Path) -> Result<FeatureMatrix> {
    let meta: FeatureMeta = serde_json::from_reader(open(meta_path)?)
        .map_err(|e| MaskIoError::format(meta_path, e.line(), e.to_string()))?;
    let expected = (meta.n * meta.d * 4) as u64;
    // A missing blob is reported as a zero-length one.
    let bytes = match fs::read(bin_path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(MaskIoError::io(bin_path, e)),
    };
    if bytes.len() as u64 != expected {
        return Err(MaskIoError::DimensionMismatch {
            n: meta.n,
            d: meta.d,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FeatureMatrix::new(meta.n, meta.d, data))
}

pub fn write_features(features: &FeatureMatrix, meta_path: &Path, bin_path: &Path) -> Result<()> {
    let meta = FeatureMeta {
        n: features.rows(),
        d: features.dim(),
    };
    let mut w = create(meta_path)?;
    serde_json::to_writer(&mut w, &meta).map_err(|e| MaskIoError::io(meta_path, e.into()))?;
    w.flush().map_err(|e| MaskIoError::io(meta_path, e))?;

    let mut w = create(bin_path)?;
    for v in features.as_slice() {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| MaskIoError::io(bin_path, e))?;
    }
    w.flush().map_err(|e| MaskIoError::io(bin_path, e))
}

/// Reads an instance. Masks keep file order; geometries are joined by mask_id
/// and image sizes are taken from them.
pub fn read_instance(
    paths: &InstancePaths,
    k_base: u32,
    k_novel: u32,
) -> Result<DiscoveryInstance> {
    let mut masks = Vec::new();
    let mut index_of = HashMap::new();
    for (line, r) in read_ndjson::<RecordLine>(&paths.records)? {
        match (r.split, r.label) {
            (Split::Labeled, None) => {
                return Err(MaskIoError::format(
                    &paths.records,
                    line,
                    format!("mask {}: split \"labeled\" requires a label", r.mask_id),
                ))
            }
            (Split::Unlabeled, Some(_)) => {
                return Err(MaskIoError::format(
                    &paths.records,
                    line,
                    format!(
                        "mask {}: split \"unlabeled\" must have label null",
                        r.mask_id
                    ),
                ))
            }
            _ => {}
        }
        if index_of.insert(r.mask_id, masks.len()).is_some() {
            return Err(MaskIoError::DuplicateMaskId { mask_id: r.mask_id });
        }
        masks.push(MaskRecord {
            mask_id: r.mask_id,
            image_id: r.image_id,
            area: r.area,
            bbox: r.bbox,
            label: r.label,
            split: r.split,
            geometry: None,
        });
    }

    let features = read_features(&paths.features_meta, &paths.features_bin)?;
    if features.rows() != masks.len() {
        return Err(MaskIoError::RecordCountMismatch {
            records: masks.len(),
            rows: features.rows(),
        });
    }

    let mut sizes: BTreeMap<u64, [u32; 2]> = BTreeMap::new();
    if let Some(gpath) = &paths.geometries {
        for (line, g) in read_ndjson::<GeometryLine>(gpath)? {
            let &idx = index_of
                .get(&g.mask_id)
                .ok_or(MaskIoError::DanglingGeometry { mask_id: g.mask_id })?;
            let mask = &mut masks[idx];
            if mask.geometry.is_some() {
                return Err(MaskIoError::format(
                    gpath,
                    line,
                    format!("second geometry for mask {}", g.mask_id),
                ));
            }
            let rle = RleMask {
                size: g.size,
                counts: g.counts,
            };
            rle.check()?;
            sizes.entry(mask.image_id).or_insert(g.size);
            mask.geometry = Some(rle);
        }
    }
    let images = sizes
        .into_iter()
        .map(|(image_id, [height, width])| ImageInfo {
            image_id,
            height,
            width,
        })
        .collect();

    Ok(DiscoveryInstance {
        masks,
        features,
        k_base,
        k_novel,
        images,
    })
}

/// Writes records, features and (when `paths.geometries` is set) geometries.
pub fn write_instance(instance: &DiscoveryInstance, paths: &InstancePaths) -> Result<()> {
    let records: Vec<RecordLine> = instance
        .masks
        .iter()
        .map(|m| RecordLine {
            mask_id: m.mask_id,
            image_id: m.image_id,
            area: m.area,
            bbox: m.bbox,
            label: m.label,
            split: m.split,
        })
        .collect();
    write_ndjson(&paths.records, &records)?;
    write_features(
        &instance.features,
        &paths.features_meta,
        &paths.features_bin,
    )?;
    if let Some(gpath) = &paths.geometries {
        let lines: Vec<GeometryLine> = instance
            .masks
            .iter()
            .filter_map(|m| {
                m.geometry.as_ref().map(|g| GeometryLine {
                    mask_id: m.mask_id,
                    size: g.size,
                    counts: g.counts.clone(),
                })
            })
            .collect();
        write_ndjson(gpath, &lines)?;
    }
    Ok(())
}

/// Writes assignments sorted by mask_id.
pub fn write_labels(assignments: &[LabelAssignment], path: &Path) -> Result<()> {
    let mut sorted = assignments.to_vec();
    sorted.sort_by_key(|a| a.mask_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].mask_id == w[1].mask_id) {
        return Err(MaskIoError::DuplicateMaskId {
            mask_id: w[0].mask_id,
        });
    }
    write_ndjson(path, &sorted)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelAssignment>> {
    Ok(read_ndjson(path)?.into_iter().map(|(_, a)| a).collect())
}

/// Dumps a propagation state; `mask_ids[i]` names entry `i` of `labels`.
pub fn write_state(
    mask_ids: &[u64],
    labels: &[Label],
    confidence: &[f64],
    stage: &str,
    path: &Path,
) -> Result<()> {
    let lines: Vec<StateLine> = mask_ids
        .iter()
        .zip(labels)
        .zip(confidence)
        .map(|((&mask_id, l), &confidence)| StateLine {
            mask_id,
            label: l.class(),
            confidence,
            stage: stage.to_string(),
        })
        .collect();
    write_ndjson(path, &lines)
}

pub fn read_state(path: &Path) -> Result<Vec<StateLine>> {
    Ok(read_ndjson(path)?.into_iter().map(|(_, s)| s).collect())
}

pub fn map_file_name(image_id: u64) -> String {
    format!("map_{image_id}.u16")
}

pub fn encode_map(map: &SegmentationMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 2 * map.labels.len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    out.extend_from_slice(&map.width.to_le_bytes());
    for v in &map.labels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a map file body; `image_id` is supplied by the caller (it lives in
/// the file name, not the header).
pub fn decode_map(bytes: &[u8], image_id: u64, path: &Path) -> Result<SegmentationMap> {
    if bytes.len() < 16 || &bytes[0..4] != MAP_MAGIC {
        return Err(MaskIoError::format(path, 0, "missing GCDM header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MAP_VERSION {
        return Err(MaskIoError::format(
            path,
            0,
            format!("unsupported map version {version}"),
        ));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let n = height as usize * width as usize;
    if bytes.len() != 16 + 2 * n {
        return Err(MaskIoError::format(
            path,
            0,
            format!(
                "{height}x{width} map needs {} bytes, file has {}",
                16 + 2 * n,
                bytes.len()
            ),
        ));
    }
    let labels = bytes[16..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(SegmentationMap {
        image_id,
        height,
        width,
        labels,
    })
}

pub fn write_map(map: &SegmentationMap, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(&encode_map(map))
        .map_err(|e| MaskIoError::io(path, e))?;
    w.flush().map_err(|e| MaskIoError::io(path, e))
}

pub fn read_map(path: &Path, image_id: u64) -> Result<SegmentationMap> {
    let bytes = fs::read(path).map_err(|e| MaskIoError::io(path, e))?;
    decode_map(&bytes, image_id, path)
}

/// Writes every map as `dir/map_<image_id>.u16`.
pub fn write_maps(maps: &[SegmentationMap], dir: &Path) -> Result<()> {
    for m in maps {
        write_map(m, &dir.join(map_file_name(m.image_id)))?;
    }
    Ok(())
}

/// Reads every `map_<id>.u16` in `dir`, ordered by image id.
pub fn read_maps(dir: &Path) -> Result<Vec<SegmentationMap>> {
    let entries = fs::read_dir(dir).map_err(|e| MaskIoError::io(dir, e))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| MaskIoError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name
            .strip_prefix("map_")
            .and_then(|s| s.strip_suffix(".u16"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            found.insert(id, entry.path());
        }
    }
    found
        .into_iter()
        .map(|(id, path)| read_map(&path, id))
        .collect()
}
