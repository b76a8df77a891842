//! Reliability-weighted fusion of the safety and quality detection streams.
//!
//! Where the raw frame is reliable (low entropy) the fast detector on the raw
//! frame is trusted; elsewhere the strong detector on the enhanced frame is.

use crate::geometry::{nms, Detection, Stream};
use crate::pee::{PeeError, ReliabilityMap};

pub const CONF_THRESHOLD: f64 = 0.25;
pub const NMS_IOU: f64 = 0.45;

/// Score of a detection given the reliability `r` at its box centre.
pub fn weighted_score(det: &Detection, r: f64) -> f64 {
    let weight = match det.source {
        Stream::Safety => r,
        Stream::Quality => 1.0 - r,
    };
    (weight * det.conf).clamp(0.0, 1.0)
}

/// Drops low-confidence detections, reweights the rest by source and
/// reliability, and suppresses the pooled set class by class.
pub fn fuse(
    safety: &[Detection],
    quality: &[Detection],
    rmap: &ReliabilityMap,
    conf_thresh: f64,
    iou_thresh: f64,
) -> Result<Vec<Detection>, PeeError> {
    let mut pooled = Vec::with_capacity(safety.len() + quality.len());
    for det in safety.iter().chain(quality) {
        if det.conf < conf_thresh {
            continue;
        }
        let (cx, cy) = det.bbox.center();
        let r = rmap.reliability_at(cx, cy)?;
        pooled.push(Detection {
            score: weighted_score(det, r),
            ..*det
        });
    }
    Ok(nms(&pooled, iou_thresh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(x: f64, conf: f64, source: Stream) -> Detection {
        Detection::new(BBox::new(x, 10.0, x + 20.0, 30.0).unwrap(), 0, conf, source)
    }

    #[test]
    fn full_reliability_prefers_safety() {
        let rmap = ReliabilityMap::uniform(64, 64, 1.0);
        let out = fuse(
            &[det(10.0, 0.6, Stream::Safety)],
            &[det(11.0, 0.9, Stream::Quality)],
            &rmap,
            CONF_THRESHOLD,
            NMS_IOU,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, Stream::Safety);
        assert_eq!(out[0].score, 0.6);
    }

    #[test]
    fn zero_reliability_prefers_quality() {
        let rmap = ReliabilityMap::uniform(64, 64, 0.0);
        let out = fuse(
            &[det(10.0, 0.9, Stream::Safety)],
            &[det(11.0, 0.5, Stream::Quality)],
            &rmap,
            CONF_THRESHOLD,
            NMS_IOU,
        )
        .unwrap();
        assert_eq!(out[0].source, Stream::Quality);
        // The zero-score safety box is still returned if it survives NMS.
        let apart = fuse(
            &[det(40.0, 0.9, Stream::Safety)],
            &[det(0.0, 0.5, Stream::Quality)],
            &rmap,
            CONF_THRESHOLD,
            NMS_IOU,
        )
        .unwrap();
        assert_eq!(apart.len(), 2);
        assert_eq!(apart[1].score, 0.0);
    }

    #[test]
    fn threshold_uses_raw_confidence() {
        let rmap = ReliabilityMap::uniform(64, 64, 0.5);
        let out = fuse(&[det(10.0, 0.3, Stream::Safety), det(40.0, 0.2, Stream::Safety)], &[], &rmap, 0.25, 0.45).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.15);
    }

    #[test]
    fn out_of_frame_box_is_an_error() {
        let rmap = ReliabilityMap::uniform(16, 16, 0.5);
        assert!(fuse(&[det(100.0, 0.9, Stream::Safety)], &[], &rmap, 0.25, 0.45).is_err());
    }
}
