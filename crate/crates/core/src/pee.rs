//! Patch-level Shannon entropy turned into a per-region reliability score.
//!
//! For each 16x16 patch a 16-bin histogram (`sample >> 4`) is normalized and
//! `R = 1 - H / log2(16)`. Edge patches use their actual pixel count.

use crate::imaging::{to_lab, ImagingError, Raster};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PATCH_SIZE: usize = 16;
const BINS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum PeeError {
    #[error("reliability query ({x}, {y}) outside {width}x{height} frame")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityMap {
    cols: usize,
    rows: usize,
    grid: Vec<f64>,
    patch_size: usize,
    width: usize,
    height: usize,
}

/// Shannon entropy in bits of a histogram with `total` samples.
fn entropy(hist: &[u32; BINS], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

impl ReliabilityMap {
    /// A map with the same value everywhere.
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        let cols = width.div_ceil(PATCH_SIZE).max(1);
        let rows = height.div_ceil(PATCH_SIZE).max(1);
        Self {
            cols,
            rows,
            grid: vec![value.clamp(0.0, 1.0); cols * rows],
            patch_size: PATCH_SIZE,
            width,
            height,
        }
    }

    /// Builds a map from explicit per-patch values (row-major).
    pub fn from_grid(width: usize, height: usize, grid: Vec<f64>) -> Option<Self> {
        let cols = width.div_ceil(PATCH_SIZE).max(1);
        let rows = height.div_ceil(PATCH_SIZE).max(1);
        if grid.len() != cols * rows {
            return None;
        }
        Some(Self {
            cols,
            rows,
            grid: grid.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            patch_size: PATCH_SIZE,
            width,
            height,
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn patch(&self, col: usize, row: usize) -> f64 {
        self.grid[row * self.cols + col]
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn center(&self, idx: usize, extent: usize) -> f64 {
        let start = idx * self.patch_size;
        let end = ((idx + 1) * self.patch_size).min(extent.max(start + 1));
        (start + end) as f64 / 2.0
    }

    fn axis(&self, p: f64, count: usize, extent: usize) -> (usize, usize, f64) {
        let first = self.center(0, extent);
        let last = self.center(count - 1, extent);
        if p <= first || count == 1 {
            return (0, 0, 0.0);
        }
        if p >= last {
            return (count - 1, count - 1, 0.0);
        }
        let mut i = ((p / self.patch_size as f64) - 0.5).floor().max(0.0) as usize;
        i = i.min(count - 2);
        while i > 0 && self.center(i, extent) > p {
            i -= 1;
        }
        while i + 1 < count - 1 && self.center(i + 1, extent) <= p {
            i += 1;
        }
        let (c0, c1) = (self.center(i, extent), self.center(i + 1, extent));
        (i, i + 1, (p - c0) / (c1 - c0))
    }

    /// Bilinear interpolation between patch centres; clamped to [0,1].
    pub fn reliability_at(&self, x: f64, y: f64) -> Result<f64, PeeError> {
        let inside = x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64;
        if !inside {
            return Err(PeeError::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let (c0, c1, wx) = self.axis(x, self.cols, self.width);
        let (r0, r1, wy) = self.axis(y, self.rows, self.height);
        let top = (1.0 - wx) * self.patch(c0, r0) + wx * self.patch(c1, r0);
        let bot = (1.0 - wx) * self.patch(c0, r1) + wx * self.patch(c1, r1);
        Ok(((1.0 - wy) * top + wy * bot).clamp(0.0, 1.0))
    }

    /// Full-resolution map sampled at pixel centres.
    pub fn upsample(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(
                    self.reliability_at(x as f64 + 0.5, y as f64 + 0.5)
                        .expect("pixel centres are in bounds"),
                );
            }
        }
        out
    }

    /// 8-bit heat image (R scaled to 0..255) at full resolution.
    pub fn to_heat_raster(&self) -> Raster {
        let data = self
            .upsample()
            .into_iter()
            .map(|r| (r * 255.0).round() as u8)
            .collect();
        Raster::new(self.width, self.height, 1, data).expect("dimensions match")
    }

    /// One text row per patch row, values with four decimals.
    pub fn to_text_grid(&self) -> String {
        let mut s = String::new();
        for row in self.grid.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Reliability map of a single-channel raster.
pub fn entropy_map(gray: &Raster) -> Result<ReliabilityMap, ImagingError> {
    if gray.channels() != 1 {
        return Err(ImagingError::ChannelMismatch {
            expected: 1,
            got: gray.channels(),
        });
    }
    let (w, h) = (gray.width(), gray.height());
    let cols = w.div_ceil(PATCH_SIZE).max(1);
    let rows = h.div_ceil(PATCH_SIZE).max(1);
    let mut hists = vec![[0u32; BINS]; cols * rows];
    let mut counts = vec![0u32; cols * rows];
    for y in 0..h {
        let row = y / PATCH_SIZE;
        for x in 0..w {
            let j = row * cols + x / PATCH_SIZE;
            hists[j][(gray.get(x, y, 0) >> 4) as usize] += 1;
            counts[j] += 1;
        }
    }
    let max_entropy = (BINS as f64).log2();
    let grid = hists
        .iter()
        .zip(&counts)
        .map(|(hist, &n)| {
            if n == 0 {
                1.0
            } else {
                (1.0 - entropy(hist, n) / max_entropy).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(ReliabilityMap {
        cols,
        rows,
        grid,
        patch_size: PATCH_SIZE,
        width: w,
        height: h,
    })
}

/// Reliability map of an RGB frame, computed on its LAB L channel.
pub fn entropy_map_rgb(frame: &Raster) -> Result<ReliabilityMap, ImagingError> {
    if frame.channels() == 1 {
        return entropy_map(frame);
    }
    entropy_map(&to_lab(frame)?.channel(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch_is_fully_reliable() {
        let m = entropy_map(&Raster::filled(16, 16, 1, 77)).unwrap();
        assert_eq!(m.grid(), &[1.0]);
    }

    #[test]
    fn uniform_over_bins_is_zero() {
        // Each row covers all 16 bins exactly once.
        let r = Raster::from_fn_gray(16, 16, |x, _| (x * 16) as u8);
        let m = entropy_map(&r).unwrap();
        assert!(m.grid()[0].abs() < 1e-12);
    }

    #[test]
    fn two_bins_half_and_half() {
        let r = Raster::from_fn_gray(16, 16, |x, _| if x < 8 { 3 } else { 250 });
        let m = entropy_map(&r).unwrap();
        assert!((m.grid()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn grid_dims_round_up() {
        let m = entropy_map(&Raster::filled(33, 17, 1, 0)).unwrap();
        assert_eq!((m.cols(), m.rows()), (3, 2));
    }

    #[test]
    fn interpolation_nodes_and_midpoints() {
        let m = ReliabilityMap::from_grid(32, 16, vec![0.0, 1.0]).unwrap();
        assert_eq!(m.reliability_at(8.0, 8.0).unwrap(), 0.0);
        assert_eq!(m.reliability_at(24.0, 8.0).unwrap(), 1.0);
        assert!((m.reliability_at(16.0, 8.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(m.reliability_at(-1.0, 3.0).is_err());
        assert!(m.reliability_at(3.0, 16.5).is_err());
        let u = ReliabilityMap::uniform(50, 40, 0.6);
        assert!((u.reliability_at(13.3, 37.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn partial_edge_patch_centre() {
        // 20 px wide: patch 1 spans [16, 20), centre 18.
        let m = ReliabilityMap::from_grid(20, 16, vec![0.2, 0.8]).unwrap();
        assert!((m.reliability_at(18.0, 8.0).unwrap() - 0.8).abs() < 1e-12);
        assert!((m.reliability_at(13.0, 8.0).unwrap() - 0.5).abs() < 1e-12);
    }
}
