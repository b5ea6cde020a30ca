//! Uncompressed COCO-style run-length encoding of binary masks.
//!
//! Runs are taken in column-major (Fortran) order and alternate between
//! background and foreground, starting with background. The first run may be
//! empty, so a mask whose top-left pixel is set starts with `0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RleError {
    #[error("rle counts sum to {actual}, expected {expected} ({height}x{width})")]
    SumMismatch {
        height: u32,
        width: u32,
        expected: u64,
        actual: u64,
    },
    #[error("bitmap dimensions must be non-zero (got {height}x{width})")]
    EmptyBitmap { height: u32, width: u32 },
}

/// Dense binary raster, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    height: u32,
    width: u32,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height as usize * width as usize],
        }
    }

    /// Builds a bitmap from row-major pixels.
    pub fn from_row_major(height: u32, width: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height as usize * width as usize);
        Self {
            height,
            width,
            bits,
        }
    }

    /// Builds a bitmap from column-major pixels, pixel (x, y) at `y + h * x`.
    pub fn from_column_major(height: u32, width: u32, flat: &[bool]) -> Self {
        let (h, w) = (height as usize, width as usize);
        assert_eq!(flat.len(), h * w);
        let mut bits = vec![false; h * w];
        for x in 0..w {
            for y in 0..h {
                bits[y * w + x] = flat[y + h * x];
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn get(&self, y: u32, x: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, y: u32, x: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn row_major(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_column_major(&self) -> Vec<bool> {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut out = Vec::with_capacity(h * w);
        for x in 0..w {
            for y in 0..h {
                out.push(self.bits[y * w + x]);
            }
        }
        out
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn pixel_count(&self) -> u64 {
        self.size[0] as u64 * self.size[1] as u64
    }

    /// Checks that the runs cover the raster exactly.
    pub fn check(&self) -> Result<(), RleError> {
        let actual: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if actual != self.pixel_count() {
            return Err(RleError::SumMismatch {
                height: self.height(),
                width: self.width(),
                expected: self.pixel_count(),
                actual,
            });
        }
        Ok(())
    }

    /// Foreground pixel count (sum of odd-indexed runs).
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    /// Foreground runs as half-open column-major index ranges.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    /// Foreground pixels as `(y, x)`, in column-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height() as u64;
        self.foreground_runs()
            .flat_map(move |(s, e)| (s..e).map(move |i| ((i % h) as u32, (i / h) as u32)))
    }

    /// Tight `(x, y, w, h)` bounding box of the foreground, or `None` when empty.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let h = self.height() as u64;
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (s, e) in self.foreground_runs() {
            let (x0, x1) = ((s / h) as u32, ((e - 1) / h) as u32);
            // A run spanning a column boundary touches every row.
            let (y0, y1) = if x0 == x1 {
                ((s % h) as u32, ((e - 1) % h) as u32)
            } else {
                (0, (h - 1) as u32)
            };
            bounds = Some(match bounds {
                None => (x0, y0, x1, y1),
                Some((ax0, ay0, ax1, ay1)) => (ax0.min(x0), ay0.min(y0), ax1.max(x1), ay1.max(y1)),
            });
        }
        bounds.map(|(x0, y0, x1, y1)| [x0, y0, x1 - x0 + 1, y1 - y0 + 1])
    }

    /// Axis-aligned rectangle `rows × cols` with top-left corner at `(y0, x0)`.
    pub fn rectangle(height: u32, width: u32, y0: u32, x0: u32, rows: u32, cols: u32) -> Self {
        assert!(y0 + rows <= height && x0 + cols <= width);
        let mut counts = Vec::with_capacity(2 * cols as usize + 2);
        if rows == 0 || cols == 0 {
            counts.push(height * width);
            return Self {
                size: [height, width],
                counts,
            };
        }
        let lead = x0 * height + y0;
        counts.push(lead);
        if rows == height {
            counts.push(rows * cols);
        } else {
            for c in 0..cols {
                counts.push(rows);
                if c + 1 < cols {
                    counts.push(height - rows);
                }
            }
        }
        let used: u32 = counts.iter().sum();
        if used < height * width {
            counts.push(height * width - used);
        }
        Self {
            size: [height, width],
            counts,
        }
    }
}

/// Encodes a bitmap; runs alternate zeros/ones starting with zeros.
pub fn rle_encode(bitmap: &Bitmap) -> Result<RleMask, RleError> {
    if bitmap.height == 0 || bitmap.width == 0 {
        return Err(RleError::EmptyBitmap {
            height: bitmap.height,
            width: bitmap.width,
        });
    }
    let (h, w) = (bitmap.height as usize, bitmap.width as usize);
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = bitmap.bits[y * w + x];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Ok(RleMask {
        size: [bitmap.height, bitmap.width],
        counts,
    })
}

/// Encodes every region of a row-major label raster in one column-major
/// scan. Region `r` yields the same runs as `rle_encode` on its indicator
/// bitmap; regions without pixels come out empty.
pub fn rle_encode_regions(
    height: u32,
    width: u32,
    labels: &[u32],
    regions: usize,
) -> Result<Vec<RleMask>, RleError> {
    if height == 0 || width == 0 {
        return Err(RleError::EmptyBitmap { height, width });
    }
    let (h, w) = (height as usize, width as usize);
    assert_eq!(labels.len(), h * w);
    let total = (h * w) as u32;
    let mut counts: Vec<Vec<u32>> = vec![Vec::new(); regions];
    let mut end = vec![0u32; regions];
    let mut pos = 0u32;
    for x in 0..w {
        for y in 0..h {
            let r = labels[y * w + x] as usize;
            let c = &mut counts[r];
            if !c.is_empty() && end[r] == pos {
                *c.last_mut().expect("non-empty") += 1;
            } else {
                c.push(pos - end[r]);
                c.push(1);
            }
            end[r] = pos + 1;
            pos += 1;
        }
    }
    Ok(counts
        .into_iter()
        .zip(end)
        .map(|(mut c, e)| {
            if e < total {
                c.push(total - e);
            }
            RleMask {
                size: [height, width],
                counts: c,
            }
        })
        .collect())
}

pub fn rle_decode(rle: &RleMask) -> Result<Bitmap, RleError> {
    rle.check()?;
    let mut bitmap = Bitmap::new(rle.height(), rle.width());
    let w = rle.width() as usize;
    for (y, x) in rle.pixels() {
        bitmap.bits[y as usize * w + x as usize] = true;
    }
    Ok(bitmap)
}


#[cfg(test)]
mod region_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn regions_match_indicator_encoding(
            (h, w, labels) in (1u32..7, 1u32..7).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), proptest::collection::vec(0u32..4, (h * w) as usize))
            })
        ) {
            let masks = rle_encode_regions(h, w, &labels, 5).unwrap();
            for (r, m) in masks.iter().enumerate() {
                let bits = labels.iter().map(|&l| l as usize == r).collect();
                let expected = rle_encode(&Bitmap::from_row_major(h, w, bits)).unwrap();
                prop_assert_eq!(m, &expected);
            }
        }
    }
}
