use super::PipelineError;
use crate::eval::{load_corpus, ClassMap};
use crate::frame::{Frame, FrameTruth};
use crate::synth;
use crate::wem::Condition;
use std::path::Path;

/// Frames from a corpus directory, in manifest (or file-name) order, with
/// annotations attached as ground truth and capture times `i·period_ms`.
pub fn frames_from_dir(
    dir: impl AsRef<Path>,
    classes: &ClassMap,
    period_ms: f64,
) -> Result<(Vec<Frame>, Vec<String>), PipelineError> {
    let corpus = load_corpus(dir, classes).map_err(|e| PipelineError::Source(e.to_string()))?;
    let frames = corpus
        .images
        .into_iter()
        .enumerate()
        .map(|(i, img)| Frame {
            raster: img.raster,
            index: i as u64,
            capture_ms: i as f64 * period_ms,
            truth: Some(
                FrameTruth {
                    condition: img.gt.condition,
                    severity: img.gt.severity,
                    boxes: img.gt.boxes,
                }
                .into(),
            ),
        })
        .collect();
    Ok((frames, corpus.warnings))
}

/// A panning synthetic video under one condition.
pub fn synthetic_frames(
    count: usize,
    condition: Condition,
    severity: f64,
    width: usize,
    height: usize,
    seed: u64,
    period_ms: f64,
) -> Vec<Frame> {
    synth::video(count, condition, severity, width, height, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (raster, truth))| Frame::new(raster, i as u64, i as f64 * period_ms).with_truth(truth))
        .collect()
}
