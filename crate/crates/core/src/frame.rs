use crate::geometry::BBox;
use crate::imaging::Raster;
use crate::wem::Condition;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Known scene content attached to synthetic or annotated frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub condition: Option<Condition>,
    pub severity: Option<f64>,
    pub boxes: Vec<(u32, BBox)>,
}

/// A captured raster with its sequence index and capture time.
#[derive(Clone, Debug)]
pub struct Frame {
    pub raster: Arc<Raster>,
    pub index: u64,
    /// Capture timestamp in milliseconds on the source's monotonic clock.
    pub capture_ms: f64,
    pub truth: Option<Arc<FrameTruth>>,
}

impl Frame {
    pub fn new(raster: Raster, index: u64, capture_ms: f64) -> Self {
        Self {
            raster: Arc::new(raster),
            index,
            capture_ms,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: FrameTruth) -> Self {
        self.truth = Some(Arc::new(truth));
        self
    }
}
