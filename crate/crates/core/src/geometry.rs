//! Boxes, IoU, class-aware NMS and rectangular Hungarian assignment.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): need x2 > x1 and y2 > y1")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x2 > x1 && y2 > y1) {
            return Err(GeometryError::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Intersection over union with exact areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which detector stream produced a detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    /// Fast detector on the raw frame.
    Safety,
    /// Strong detector on the enhanced frame.
    Quality,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    /// Raw detector confidence in [0,1].
    pub conf: f64,
    pub source: Stream,
    /// Ranking score; equals `conf` until reliability weighting rewrites it.
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, conf: f64, source: Stream) -> Self {
        let conf = conf.clamp(0.0, 1.0);
        Self {
            bbox,
            class_id,
            conf,
            source,
            score: conf,
        }
    }
}

/// Descending score; ties by (class_id, x1, y1) ascending.
pub fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy class-aware non-maximum suppression. Survivors are returned in
/// score order with their scores untouched.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(score_order);
    let mut keep: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = keep
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            keep.push(d);
        }
    }
    keep
}

/// Minimum-cost assignment on a rectangular cost matrix given as rows.
///
/// Every row (or every column, whichever side is shorter) is assigned.
/// Pairs are returned sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        solve_assignment(rows, cols, |i, j| cost[i][j])
    } else {
        let mut pairs: Vec<_> = solve_assignment(cols, rows, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Shortest augmenting path with potentials, O(n^2 m) for n <= m.
fn solve_assignment(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based internal indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<_> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &b(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
        // Touching edges share no area.
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(1.0, 1.0, 1.0, 5.0).is_err());
        assert!(BBox::new(0.0, 3.0, 4.0, 2.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 4.0, 2.0).is_err());
    }

    #[test]
    fn nms_basics() {
        assert!(nms(&[], 0.45).is_empty());
        let a = Detection::new(b(0.0, 0.0, 10.0, 10.0), 0, 0.9, Stream::Safety);
        let c = Detection::new(b(0.0, 0.0, 10.0, 10.0), 0, 0.8, Stream::Safety);
        let kept = nms(&[c, a], 0.45);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].conf, 0.9);
        // Different class never suppresses.
        let other = Detection::new(b(0.0, 0.0, 10.0, 10.0), 1, 0.8, Stream::Safety);
        assert_eq!(nms(&[a, other], 0.45).len(), 2);
    }

    #[test]
    fn nms_tie_break_is_deterministic() {
        let a = Detection::new(b(0.0, 0.0, 10.0, 10.0), 0, 0.5, Stream::Safety);
        let c = Detection::new(b(1.0, 0.0, 11.0, 10.0), 0, 0.5, Stream::Quality);
        assert_eq!(nms(&[c, a], 0.45)[0].bbox.x1, 0.0);
        assert_eq!(nms(&[a, c], 0.45)[0].bbox.x1, 0.0);
    }

    #[test]
    fn hungarian_small() {
        assert_eq!(hungarian(&[vec![3.0]]), vec![(0, 0)]);
        let diag = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        assert_eq!(hungarian(&diag), vec![(0, 0), (1, 1), (2, 2)]);
        // Rectangular, both orientations.
        let wide = vec![vec![5.0, 1.0, 9.0], vec![2.0, 8.0, 0.5]];
        assert_eq!(hungarian(&wide), vec![(0, 1), (1, 2)]);
        let tall = vec![vec![5.0, 2.0], vec![1.0, 8.0], vec![9.0, 0.5]];
        assert_eq!(hungarian(&tall), vec![(1, 0), (2, 1)]);
        assert!(hungarian(&[]).is_empty());
    }
}
