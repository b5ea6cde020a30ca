//! SLIC superpixels in RGB space and a naive per-mask feature extractor.
//!
//! Output masks are pairwise disjoint, cover the image, and are 4-connected.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask_io::rle::{rle_encode_regions, RleMask};
use crate::model::{FeatureMatrix, MaskRecord, Split};

#[derive(Debug, Error)]
pub enum SlicError {
    #[error("invalid SLIC parameters: {0}")]
    Param(String),
    #[error("image has no pixels")]
    EmptyImage,
    #[error("{path}: {message}")]
    Ppm { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: u32,
    pub width: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: u32, width: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height as usize * width as usize * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: u32, width: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height as usize * width as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, y: u32, x: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn pixel_count(&self) -> usize {
        self.height as usize * self.width as usize
    }
}

fn ppm_error(path: &Path, message: impl Into<String>) -> SlicError {
    SlicError::Ppm {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn ppm_token(reader: &mut impl BufRead, path: &Path) -> Result<String, SlicError> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte).map_err(|source| SlicError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut rest = Vec::new();
            reader
                .read_until(b'\n', &mut rest)
                .map_err(|source| SlicError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c as char);
    }
    if token.is_empty() {
        return Err(ppm_error(path, "truncated header"));
    }
    Ok(token)
}

/// Reads a binary PPM (P6) with maxval 255.
pub fn read_ppm(path: &Path) -> Result<RgbImage, SlicError> {
    let file = std::fs::File::open(path).map_err(|source| SlicError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    if ppm_token(&mut reader, path)? != "P6" {
        return Err(ppm_error(path, "not a binary PPM (P6)"));
    }
    let mut number = |what: &str| -> Result<u32, SlicError> {
        ppm_token(&mut reader, path)?
            .parse()
            .map_err(|_| ppm_error(path, format!("bad {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(ppm_error(path, format!("maxval {maxval}, expected 255")));
    }
    let mut data = vec![0u8; height as usize * width as usize * 3];
    reader
        .read_exact(&mut data)
        .map_err(|_| ppm_error(path, "truncated pixel data"))?;
    Ok(RgbImage {
        height,
        width,
        data,
    })
}

pub fn write_ppm(image: &RgbImage, path: &Path) -> Result<(), SlicError> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.data);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|source| SlicError::Io {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicParams {
    pub n_segments: u32,
    pub compactness: f64,
    pub max_iters: u32,
    pub seed_perturb: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_segments: 100,
            compactness: 10.0,
            max_iters: 10,
            seed_perturb: false,
        }
    }
}

/// Cluster center: mean color and mean position (pixel centers at `x + 0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub color: [f64; 3],
    pub x: f64,
    pub y: f64,
}

/// Labels before the connectivity pass, with the energy after each center
/// update.
#[derive(Debug, Clone)]
pub struct SlicRun {
    pub labels: Vec<u32>,
    pub centers: Vec<Center>,
    pub energies: Vec<f64>,
    pub spacing: f64,
}

pub fn grid_spacing(height: u32, width: u32, n_segments: u32) -> u32 {
    let s = ((height as f64 * width as f64) / n_segments as f64)
        .sqrt()
        .round();
    (s as u32).max(1)
}

/// Seed grid dimensions `(nx, ny)`, with at least `n_segments` cells unless
/// the image is smaller, and at most `2 · n_segments`.
fn grid_shape(height: u32, width: u32, n_segments: u32) -> (u32, u32) {
    let s = grid_spacing(height, width, n_segments) as f64;
    let mut nx = ((width as f64 / s).round() as u32).clamp(1, width);
    let mut ny = ((height as f64 / s).round() as u32).clamp(1, height);
    while nx * ny < n_segments {
        let grow_x =
            nx < width && (ny == height || width as f64 / nx as f64 >= height as f64 / ny as f64);
        if grow_x {
            nx += 1;
        } else {
            ny += 1;
        }
    }
    while nx * ny > 2 * n_segments {
        let shrink_x = nx > 1 && (ny == 1 || width as f64 / nx as f64 <= height as f64 / ny as f64);
        if shrink_x {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    (nx, ny)
}

fn color_at(image: &RgbImage, idx: usize) -> [f64; 3] {
    let i = 3 * idx;
    [
        image.data[i] as f64,
        image.data[i + 1] as f64,
        image.data[i + 2] as f64,
    ]
}

fn gradient(image: &RgbImage, y: u32, x: u32) -> f64 {
    let w = image.width as usize;
    let at = |yy: u32, xx: u32| color_at(image, yy as usize * w + xx as usize);
    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(image.width - 1));
    let (yu, yd) = (y.saturating_sub(1), (y + 1).min(image.height - 1));
    let (l, r, u, d) = (at(y, xl), at(y, xr), at(yu, x), at(yd, x));
    (0..3)
        .map(|c| (r[c] - l[c]).powi(2) + (d[c] - u[c]).powi(2))
        .sum()
}

fn seed_centers(image: &RgbImage, params: &SlicParams) -> Vec<Center> {
    let (h, w) = (image.height, image.width);
    let (nx, ny) = grid_shape(h, w, params.n_segments);
    let mut centers = Vec::with_capacity((nx * ny) as usize);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * w as f64 / nx as f64;
            let y = (j as f64 + 0.5) * h as f64 / ny as f64;
            let (mut px, mut py) = ((x.floor() as u32).min(w - 1), (y.floor() as u32).min(h - 1));
            let (mut cx, mut cy) = (x, y);
            if params.seed_perturb {
                let mut best = gradient(image, py, px);
                let (ox, oy) = (px, py);
                for yy in oy.saturating_sub(1)..=(oy + 1).min(h - 1) {
                    for xx in ox.saturating_sub(1)..=(ox + 1).min(w - 1) {
                        let g = gradient(image, yy, xx);
                        if g < best {
                            best = g;
                            (px, py) = (xx, yy);
                            (cx, cy) = (xx as f64 + 0.5, yy as f64 + 0.5);
                        }
                    }
                }
            }
            centers.push(Center {
                color: color_at(image, py as usize * w as usize + px as usize),
                x: cx,
                y: cy,
            });
        }
    }
    centers
}

fn distance(c: &Center, color: [f64; 3], x: f64, y: f64, spatial_weight: f64) -> f64 {
    let dc: f64 = (0..3).map(|k| (color[k] - c.color[k]).powi(2)).sum();
    let ds = (x - c.x).powi(2) + (y - c.y).powi(2);
    dc + spatial_weight * ds
}

/// Sum over pixels of color² + (m/S)²·spatial² to the assigned center.
pub fn slic_energy(
    image: &RgbImage,
    labels: &[u32],
    centers: &[Center],
    compactness: f64,
    spacing: f64,
) -> f64 {
    let w = image.width as usize;
    let weight = (compactness / spacing).powi(2);
    labels
        .iter()
        .enumerate()
        .map(|(idx, &l)| {
            let (x, y) = ((idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5);
            distance(&centers[l as usize], color_at(image, idx), x, y, weight)
        })
        .sum()
}

/// Centers bucketed on a square grid for window queries.
struct CenterGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl CenterGrid {
    fn new(centers: &[Center], cell: f64, height: u32, width: u32) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (k, c) in centers.iter().enumerate() {
            let bx = ((c.x / cell).floor().max(0.0) as usize).min(cols - 1);
            let by = ((c.y / cell).floor().max(0.0) as usize).min(rows - 1);
            buckets[by * cols + bx].push(k as u32);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn around(&self, x: f64, y: f64) -> impl Iterator<Item = u32> + '_ {
        let bx = ((x / self.cell).floor() as usize).min(self.cols - 1);
        let by = ((y / self.cell).floor() as usize).min(self.rows - 1);
        let (x0, x1) = (bx.saturating_sub(2), (bx + 2).min(self.cols - 1));
        let (y0, y1) = (by.saturating_sub(2), (by + 2).min(self.rows - 1));
        (y0..=y1).flat_map(move |yy| {
            (x0..=x1).flat_map(move |xx| self.buckets[yy * self.cols + xx].iter().copied())
        })
    }
}

fn assign(
    image: &RgbImage,
    centers: &[Center],
    current: Option<&[u32]>,
    spacing: f64,
    weight: f64,
) -> Vec<u32> {
    let w = image.width as usize;
    let grid = CenterGrid::new(centers, spacing, image.height, image.width);
    (0..image.pixel_count())
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5);
            let color = color_at(image, idx);
            let mut best: Option<(f64, u32)> = current.map(|cur| {
                let l = cur[idx];
                (distance(&centers[l as usize], color, x, y, weight), l)
            });
            let consider = |best: &mut Option<(f64, u32)>, k: u32| {
                let d = distance(&centers[k as usize], color, x, y, weight);
                if best.is_none_or(|(bd, bk)| d < bd || (d == bd && k < bk)) {
                    *best = Some((d, k));
                }
            };
            for k in grid.around(x, y) {
                let c = &centers[k as usize];
                if (c.x - x).abs() <= spacing && (c.y - y).abs() <= spacing {
                    consider(&mut best, k);
                }
            }
            if best.is_none() {
                for k in 0..centers.len() as u32 {
                    consider(&mut best, k);
                }
            }
            best.expect("at least one center").1
        })
        .collect()
}

fn update_centers(image: &RgbImage, labels: &[u32], previous: &[Center]) -> Vec<Center> {
    let w = image.width as usize;
    let mut sums = vec![[0.0f64; 6]; previous.len()];
    for (idx, &l) in labels.iter().enumerate() {
        let c = color_at(image, idx);
        let s = &mut sums[l as usize];
        s[0] += c[0];
        s[1] += c[1];
        s[2] += c[2];
        s[3] += (idx % w) as f64 + 0.5;
        s[4] += (idx / w) as f64 + 0.5;
        s[5] += 1.0;
    }
    sums.iter()
        .zip(previous)
        .map(|(s, prev)| {
            if s[5] == 0.0 {
                *prev
            } else {
                Center {
                    color: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    x: s[3] / s[5],
                    y: s[4] / s[5],
                }
            }
        })
        .collect()
}

fn check_params(image: &RgbImage, params: &SlicParams) -> Result<(), SlicError> {
    if image.pixel_count() == 0 {
        return Err(SlicError::EmptyImage);
    }
    if params.n_segments == 0 {
        return Err(SlicError::Param("n_segments must be at least 1".into()));
    }
    if params.n_segments as usize > image.pixel_count() {
        return Err(SlicError::Param(format!(
            "n_segments {} exceeds the pixel count {}",
            params.n_segments,
            image.pixel_count()
        )));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(SlicError::Param(format!(
            "compactness must be > 0, got {}",
            params.compactness
        )));
    }
    Ok(())
}

/// Iterative clustering without the connectivity pass.
pub fn slic_iterate(image: &RgbImage, params: &SlicParams) -> Result<SlicRun, SlicError> {
    check_params(image, params)?;
    let spacing = grid_spacing(image.height, image.width, params.n_segments) as f64;
    let weight = (params.compactness / spacing).powi(2);
    let mut centers = seed_centers(image, params);
    let mut labels = assign(image, &centers, None, spacing, weight);
    let mut energies = Vec::new();
    for iter in 0..params.max_iters {
        if iter > 0 {
            let next = assign(image, &centers, Some(&labels), spacing, weight);
            let unchanged = next == labels;
            labels = next;
            if unchanged {
                break;
            }
        }
        centers = update_centers(image, &labels, &centers);
        energies.push(slic_energy(
            image,
            &labels,
            &centers,
            params.compactness,
            spacing,
        ));
    }
    Ok(SlicRun {
        labels,
        centers,
        energies,
        spacing,
    })
}

/// Splits every label into 4-connected components, keeps the largest
/// component of each label and merges the rest into the largest adjacent
/// kept region. Regions are renumbered by first pixel in row-major order.
pub fn enforce_connectivity(height: u32, width: u32, labels: &[u32]) -> (Vec<u32>, usize) {
    let (h, w) = (height as usize, width as usize);
    let n = h * w;
    const NONE: u32 = u32::MAX;
    let mut comp = vec![NONE; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != NONE {
            continue;
        }
        let id = comp_label.len() as u32;
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == NONE && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }

    // Largest component per label; the first in scan order wins ties.
    let n_comp = comp_label.len();
    let mut keeper: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for c in 0..n_comp {
        let e = keeper.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    let mut region: Vec<Option<usize>> = (0..n_comp)
        .map(|c| (keeper[&comp_label[c]] == c).then_some(c))
        .collect();
    let mut region_size: Vec<usize> = (0..n_comp)
        .map(|c| if region[c].is_some() { comp_size[c] } else { 0 })
        .collect();

    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for p in 0..n {
        let (y, x) = (p / w, p % w);
        let a = comp[p] as usize;
        let mut link = |q: usize| {
            let b = comp[q] as usize;
            if a != b {
                adjacent[a].push(b);
                adjacent[b].push(a);
            }
        };
        if x + 1 < w {
            link(p + 1);
        }
        if y + 1 < h {
            link(p + w);
        }
    }
    for a in &mut adjacent {
        a.sort_unstable();
        a.dedup();
    }

    loop {
        let sizes = region_size.clone();
        let mut pending = false;
        for c in 0..n_comp {
            if region[c].is_some() {
                continue;
            }
            let target = adjacent[c]
                .iter()
                .filter_map(|&b| region[b])
                .max_by(|&r1, &r2| sizes[r1].cmp(&sizes[r2]).then(r2.cmp(&r1)));
            match target {
                Some(r) => {
                    region[c] = Some(r);
                    region_size[r] += comp_size[c];
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
    }

    let mut renumber = vec![NONE; n_comp];
    let mut next = 0u32;
    let out = comp
        .iter()
        .map(|&c| {
            let r = region[c as usize].expect("every component resolved");
            if renumber[r] == NONE {
                renumber[r] = next;
                next += 1;
            }
            renumber[r]
        })
        .collect();
    (out, next as usize)
}

/// Superpixel masks forming a 4-connected partition of the image.
pub fn slic_segment(image: &RgbImage, params: &SlicParams) -> Result<Vec<RleMask>, SlicError> {
    let run = slic_iterate(image, params)?;
    let (labels, regions) = enforce_connectivity(image.height, image.width, &run.labels);
    Ok(
        rle_encode_regions(image.height, image.width, &labels, regions)
            .expect("image is non-empty"),
    )
}

/// Five features per mask: mean R, G, B scaled to [0, 1], then mean pixel
/// column over W and mean pixel row over H.
pub fn centroid_features(image: &RgbImage, masks: &[RleMask]) -> FeatureMatrix {
    let (h, w) = (image.height as f64, image.width as f64);
    let rows: Vec<Vec<f32>> = masks
        .par_iter()
        .map(|m| {
            let mut s = [0.0f64; 5];
            for (y, x) in m.pixels() {
                let c = image.pixel(y, x);
                s[0] += c[0] as f64;
                s[1] += c[1] as f64;
                s[2] += c[2] as f64;
                s[3] += x as f64;
                s[4] += y as f64;
            }
            let a = m.area().max(1) as f64;
            vec![
                (s[0] / a / 255.0) as f32,
                (s[1] / a / 255.0) as f32,
                (s[2] / a / 255.0) as f32,
                (s[3] / a / w) as f32,
                (s[4] / a / h) as f32,
            ]
        })
        .collect();
    FeatureMatrix::from_rows(5, &rows)
}

/// Segments one image into unlabeled mask records with centroid features.
/// Mask ids count up from `first_mask_id`.
pub fn segment_image(
    image: &RgbImage,
    image_id: u64,
    first_mask_id: u64,
    params: &SlicParams,
) -> Result<(Vec<MaskRecord>, FeatureMatrix), SlicError> {
    let masks = slic_segment(image, params)?;
    let features = centroid_features(image, &masks);
    let records = masks
        .into_iter()
        .enumerate()
        .map(|(k, geometry)| MaskRecord {
            mask_id: first_mask_id + k as u64,
            image_id,
            area: geometry.area(),
            bbox: geometry.bbox().expect("superpixels are non-empty"),
            label: None,
            split: Split::Unlabeled,
            geometry: Some(geometry),
        })
        .collect();
    Ok((records, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask_io::rle::rle_decode;

    fn raster(masks: &[RleMask], h: u32, w: u32) -> Vec<Option<usize>> {
        let mut out = vec![None; (h * w) as usize];
        for (k, m) in masks.iter().enumerate() {
            for (y, x) in m.pixels() {
                let i = (y * w + x) as usize;
                assert!(out[i].is_none(), "overlap at ({x}, {y})");
                out[i] = Some(k);
            }
        }
        out
    }

    #[test]
    fn uniform_four_by_four_gives_quadrants() {
        let img = RgbImage::from_fn(4, 4, |_, _| [40, 40, 40]);
        let params = SlicParams {
            n_segments: 4,
            compactness: 10.0,
            ..Default::default()
        };
        let masks = slic_segment(&img, &params).unwrap();
        assert_eq!(masks.len(), 4);
        // Spatial Voronoi of four grid seeds, one per 2×2 block.
        let r = raster(&masks, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                let quad = (y / 2) * 2 + x / 2;
                let anchor = r[((y / 2) * 2 * 4 + (x / 2) * 2) as usize];
                assert_eq!(r[(y * 4 + x) as usize], anchor, "quadrant {quad}");
            }
        }
        assert!(masks.iter().all(|m| m.area() == 4));
    }

    #[test]
    fn single_segment_covers_image() {
        let img = RgbImage::from_fn(5, 7, |y, x| [(x * 30) as u8, (y * 40) as u8, 9]);
        let params = SlicParams {
            n_segments: 1,
            ..Default::default()
        };
        let masks = slic_segment(&img, &params).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].area(), 35);
    }

    #[test]
    fn single_row_and_column_images() {
        for (h, w) in [(1, 5), (5, 1), (1, 1), (2, 9)] {
            let img = RgbImage::from_fn(h, w, |y, x| [(x * 20) as u8, (y * 20) as u8, 0]);
            for n in 1..=(h * w).min(4) {
                let params = SlicParams {
                    n_segments: n,
                    ..Default::default()
                };
                let masks = slic_segment(&img, &params).unwrap();
                assert!((1..=2 * n as usize).contains(&masks.len()), "{h}x{w} n={n}");
                assert_eq!(masks.iter().map(|m| m.area()).sum::<u64>(), (h * w) as u64);
            }
        }
    }

    #[test]
    fn two_tone_splits_at_boundary() {
        let img = RgbImage::from_fn(8, 8, |_, x| if x < 4 { [0, 0, 0] } else { [255, 255, 255] });
        let params = SlicParams {
            n_segments: 2,
            compactness: 10.0,
            ..Default::default()
        };
        let masks = slic_segment(&img, &params).unwrap();
        assert_eq!(masks.len(), 2);
        let r = raster(&masks, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(r[y * 8 + x], r[if x < 4 { 0 } else { 7 }]);
            }
        }
    }

    #[test]
    fn too_many_segments() {
        let img = RgbImage::from_fn(2, 2, |_, _| [0, 0, 0]);
        let params = SlicParams {
            n_segments: 5,
            ..Default::default()
        };
        assert!(matches!(
            slic_segment(&img, &params),
            Err(SlicError::Param(_))
        ));
    }

    #[test]
    fn connectivity_merges_orphans() {
        // Label 0 appears twice; the single-pixel copy touches label 1 (3 px)
        // and label 2 (4 px) and joins the larger.
        let labels = vec![0, 0, 1, 1, 0, 0, 1, 0, 2, 2, 2, 2];
        let (out, n) = enforce_connectivity(3, 4, &labels);
        assert_eq!(n, 3);
        assert_eq!(out[7], out[11]);
        assert_eq!(out[0], 0);
    }

    #[test]
    fn features_of_white_and_full_masks() {
        let img = RgbImage::from_fn(3, 4, |_, _| [255, 255, 255]);
        let full = RleMask::rectangle(3, 4, 0, 0, 3, 4);
        let f = centroid_features(&img, &[full]);
        assert_eq!(&f.row(0)[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(f.row(0)[3], (1.5f64 / 4.0) as f32);
        assert_eq!(f.row(0)[4], (1.0f64 / 3.0) as f32);
    }

    #[test]
    fn features_of_per_pixel_masks() {
        let img = RgbImage::from_fn(
            1,
            2,
            |_, x| if x == 0 { [0, 0, 0] } else { [255, 255, 255] },
        );
        let masks = [
            RleMask::rectangle(1, 2, 0, 0, 1, 1),
            RleMask::rectangle(1, 2, 0, 1, 1, 1),
        ];
        let f = centroid_features(&img, &masks);
        assert_eq!(f.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.row(1), &[1.0, 1.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = RgbImage::from_fn(3, 5, |y, x| [y as u8, x as u8, 200]);
        write_ppm(&img, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
        let decoded = rle_decode(&RleMask::rectangle(3, 5, 0, 0, 3, 5)).unwrap();
        assert_eq!(decoded.count_ones(), 15);
    }
}
