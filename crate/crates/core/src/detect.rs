//! Detector contract and two deterministic stand-in detectors.

use crate::frame::Frame;
use crate::geometry::{BBox, Detection, Stream};
use crate::imaging::{sobel_magnitude, Raster};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("frame {0} has no ground-truth sidecar")]
    MissingTruth(u64),
    #[error("{0}")]
    Failed(String),
}

/// Object detector over a raster belonging to `frame`. Implementations must
/// be deterministic for a fixed input.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, frame: &Frame, raster: &Raster) -> Result<Vec<Detection>, DetectError>;
}

/// Root-mean-square contrast of the box grown by a quarter of its size on
/// every side, pooled over channels.
pub fn local_contrast(raster: &Raster, b: &BBox) -> f64 {
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let mx = b.width() * 0.25;
    let my = b.height() * 0.25;
    let x1 = (b.x1 - mx).floor().clamp(0.0, w) as usize;
    let x2 = (b.x2 + mx).ceil().clamp(0.0, w) as usize;
    let y1 = (b.y1 - my).floor().clamp(0.0, h) as usize;
    let y2 = (b.y2 + my).ceil().clamp(0.0, h) as usize;
    let n = ((x2 - x1) * (y2 - y1)) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ch = raster.channels();
    let mut var_sum = 0.0;
    for c in 0..ch {
        let (mut s, mut s2) = (0.0, 0.0);
        for y in y1..y2 {
            for x in x1..x2 {
                let v = raster.get(x, y, c) as f64;
                s += v;
                s2 += v * v;
            }
        }
        let mean = s / n;
        var_sum += (s2 / n - mean * mean).max(0.0);
    }
    (var_sum / ch as f64).sqrt()
}

/// Returns the annotated boxes with confidence equal to their local
/// contrast relative to `reference`.
#[derive(Clone, Debug)]
pub struct OracleDetector {
    pub reference_contrast: f64,
}

impl Default for OracleDetector {
    fn default() -> Self {
        Self {
            reference_contrast: 40.0,
        }
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&self, frame: &Frame, raster: &Raster) -> Result<Vec<Detection>, DetectError> {
        let truth = frame.truth.as_ref().ok_or(DetectError::MissingTruth(frame.index))?;
        Ok(truth
            .boxes
            .iter()
            .map(|(class_id, b)| {
                let conf = (local_contrast(raster, b) / self.reference_contrast).clamp(0.0, 1.0);
                Detection::new(*b, *class_id, conf, Stream::Safety)
            })
            .collect())
    }
}

/// Proposes the bounding boxes of 8-connected components of strong
/// gradient pixels. Class-agnostic: everything is class 0.
#[derive(Clone, Debug)]
pub struct ContrastDetector {
    /// Threshold on the per-pixel channel-max Sobel magnitude.
    pub threshold: f64,
    pub min_pixels: usize,
    /// Components wider or taller than this fraction of the frame are dropped.
    pub max_extent: f64,
}

impl ContrastDetector {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            min_pixels: 24,
            max_extent: 0.6,
        }
    }

    /// Weaker stand-in for the fast detector on the raw frame.
    pub fn fast() -> Self {
        Self::new(360.0)
    }

    /// Stand-in for the strong detector on the enhanced frame.
    pub fn strong() -> Self {
        Self::new(300.0)
    }

    fn magnitude(raster: &Raster) -> Vec<f64> {
        let mut mag = vec![0.0f64; raster.width() * raster.height()];
        for c in 0..raster.channels() {
            for (m, v) in mag.iter_mut().zip(sobel_magnitude(&raster.channel(c))) {
                *m = m.max(v);
            }
        }
        mag
    }
}

impl Detector for ContrastDetector {
    fn name(&self) -> &str {
        "contrast"
    }

    fn detect(&self, _frame: &Frame, raster: &Raster) -> Result<Vec<Detection>, DetectError> {
        let (w, h) = (raster.width(), raster.height());
        let mag = Self::magnitude(raster);
        let strong: Vec<bool> = mag.iter().map(|&m| m >= self.threshold).collect();
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut out = Vec::new();
        for start in 0..w * h {
            if !strong[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x1, mut y1, mut x2, mut y2) = (w, h, 0, 0);
            let (mut count, mut sum) = (0usize, 0.0);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x);
                y2 = y2.max(y);
                count += 1;
                sum += mag[i];
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if strong[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            let (bw, bh) = (x2 + 1 - x1, y2 + 1 - y1);
            if count < self.min_pixels
                || bw as f64 > self.max_extent * w as f64
                || bh as f64 > self.max_extent * h as f64
            {
                continue;
            }
            // Sobel responds on both sides of a step; pull the box in by
            // half a pixel on each side to centre it on the step.
            let b = BBox {
                x1: x1 as f64 + 0.5,
                y1: y1 as f64 + 0.5,
                x2: x2 as f64 + 0.5,
                y2: y2 as f64 + 0.5,
            };
            let conf = (sum / count as f64 / (2.0 * self.threshold)).clamp(0.0, 1.0);
            out.push(Detection::new(b, 0, conf, Stream::Safety));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameTruth;

    fn scene() -> Raster {
        Raster::from_fn_rgb(64, 48, |x, y| {
            if (20..40).contains(&x) && (10..30).contains(&y) {
                [220, 40, 30]
            } else {
                [60, 90, 30]
            }
        })
    }

    #[test]
    fn contrast_detector_finds_rectangle() {
        let r = scene();
        let f = Frame::new(r.clone(), 0, 0.0);
        let dets = ContrastDetector::new(200.0).detect(&f, &r).unwrap();
        assert_eq!(dets.len(), 1);
        let b = dets[0].bbox;
        let truth = BBox::new(20.0, 10.0, 40.0, 30.0).unwrap();
        assert!(crate::geometry::iou(&b, &truth) > 0.8);
        let flat = Raster::filled(64, 48, 3, 90);
        assert!(ContrastDetector::new(200.0).detect(&f, &flat).unwrap().is_empty());
    }

    #[test]
    fn oracle_needs_truth_and_scales_with_contrast() {
        let r = scene();
        let bare = Frame::new(r.clone(), 4, 0.0);
        assert!(matches!(
            OracleDetector::default().detect(&bare, &r),
            Err(DetectError::MissingTruth(4))
        ));
        let b = BBox::new(20.0, 10.0, 40.0, 30.0).unwrap();
        let f = bare.with_truth(FrameTruth {
            boxes: vec![(0, b)],
            ..Default::default()
        });
        let oracle = OracleDetector {
            reference_contrast: 1000.0,
        };
        let clear = oracle.detect(&f, &r).unwrap()[0].conf;
        let hazy = crate::synth::fog(&r, 0.3, [200.0; 3]);
        let foggy = oracle.detect(&f, &hazy).unwrap()[0].conf;
        assert!((foggy / clear - 0.3).abs() < 0.02);
    }
}
