//! Three-worker orchestration: the safety worker (fast detector + tracker at
//! camera rate), the quality worker (estimate, enhance, detect, fuse, inject)
//! and the analytics worker (zero-shot label, embedding, recommendation).
//!
//! The same stage functions drive a real-threaded runner and a deterministic
//! simulated-clock runner.

mod latency;
mod sim;
mod source;
mod threaded;

pub use latency::{measure_latency, LatencyReport, LatencyStats, CPU_DISCIPLINE, GPU_DISCIPLINE};
pub use sim::run_simulated;
pub use source::{frames_from_dir, synthetic_frames};
pub use threaded::run_threaded;

use crate::cape::{enhance_with, CapeError, EnhanceOptions, EnhanceReport, FilterConfig};
use crate::detect::{ContrastDetector, DetectError, Detector, OracleDetector};
use crate::egnms::{fuse, CONF_THRESHOLD, NMS_IOU};
use crate::frame::Frame;
use crate::geometry::{BBox, Detection, Stream};
use crate::imaging::{lab_stats, ImagingError, Raster};
use crate::ktt::{Track, TrackerConfig};
use crate::models::{
    default_prompts, top_label, Embedder, ModelError, ProjectionEmbedder, Prompt, ProxyZeroShot,
    ZeroShotClassifier,
};
use crate::pee::{entropy_map_rgb, PeeError, ReliabilityMap};
use crate::sed::{SedDb, SedEntry, SedError, SlotRecord};
use crate::wem::{classify, resolve_with, Condition, WeatherEstimate, SPREAD_THRESHOLD};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Enhance(#[from] CapeError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Reliability(#[from] PeeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sed(#[from] SedError),
    #[error("source: {0}")]
    Source(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::A1,
        Ablation::A2,
        Ablation::A3,
        Ablation::A4,
        Ablation::A5,
        Ablation::A6,
        Ablation::A7,
    ];

    pub fn describe(&self) -> &'static str {
        match self {
            Ablation::A1 => "blocking single thread",
            Ablation::A2 => "uniform reliability 0.5",
            Ablation::A3 => "fixed severity 0.6",
            Ablation::A4 => "enhancement passthrough",
            Ablation::A5 => "safety-only fusion",
            Ablation::A6 => "raw detections, no tracking",
            Ablation::A7 => "analytics inline in quality worker",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Error)]
#[error("unknown ablation {0:?} (expected A1..A7)")]
pub struct UnknownAblation(pub String);

impl FromStr for Ablation {
    type Err = UnknownAblation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_uppercase();
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == t)
            .ok_or_else(|| UnknownAblation(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub blocking_single_thread: bool,
    pub pee_uniform_half: bool,
    pub fixed_severity_0_6: bool,
    pub cape_passthrough: bool,
    pub egnms_s_only: bool,
    pub ktt_raw_detections: bool,
    pub thread_e_disabled: bool,
}

impl AblationFlags {
    pub fn with(mut self, a: Ablation) -> Self {
        match a {
            Ablation::A1 => self.blocking_single_thread = true,
            Ablation::A2 => self.pee_uniform_half = true,
            Ablation::A3 => self.fixed_severity_0_6 = true,
            Ablation::A4 => self.cape_passthrough = true,
            Ablation::A5 => self.egnms_s_only = true,
            Ablation::A6 => self.ktt_raw_detections = true,
            Ablation::A7 => self.thread_e_disabled = true,
        }
        self
    }

    pub fn from_ids(ids: &[Ablation]) -> Self {
        ids.iter().fold(Self::default(), |f, &a| f.with(a))
    }
}

/// Per-stage costs used by the simulated clock, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub safety_ms: f64,
    pub quality_ms: f64,
    pub analytics_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            safety_ms: 23.0,
            quality_ms: 90.0,
            analytics_ms: 107.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub period_ms: f64,
    pub filters: FilterConfig,
    pub tracker: TrackerConfig,
    pub conf_thresh: f64,
    pub nms_iou: f64,
    /// Top-2 spread below which the slot's zero-shot label is used.
    pub spread_threshold: f64,
    pub ablation: AblationFlags,
    pub costs: CostModel,
    /// Extra time added to every quality-worker cycle (sleep or simulated).
    pub quality_delay_ms: f64,
    pub enhance: EnhanceOptions,
    pub prompts: Vec<Prompt>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            period_ms: 33.0,
            filters: FilterConfig::default(),
            tracker: TrackerConfig::default(),
            conf_thresh: CONF_THRESHOLD,
            nms_iou: NMS_IOU,
            spread_threshold: SPREAD_THRESHOLD,
            ablation: AblationFlags::default(),
            costs: CostModel::default(),
            quality_delay_ms: 0.0,
            enhance: EnhanceOptions::default(),
            prompts: default_prompts(),
        }
    }
}

/// The pluggable models each worker calls.
#[derive(Clone)]
pub struct Models {
    pub fast: Arc<dyn Detector>,
    pub strong: Arc<dyn Detector>,
    pub embedder: Arc<dyn Embedder>,
    pub zero_shot: Arc<dyn ZeroShotClassifier>,
}

impl Models {
    /// Contrast detectors, a seeded projection embedder of dimension `dim`
    /// and the proxy zero-shot classifier.
    pub fn deterministic(dim: usize, seed: u64) -> Self {
        Self {
            fast: Arc::new(ContrastDetector::fast()),
            strong: Arc::new(ContrastDetector::strong()),
            embedder: Arc::new(ProjectionEmbedder::new(dim, seed)),
            zero_shot: Arc::new(ProxyZeroShot),
        }
    }

    /// Ground-truth oracle on both streams; needs annotated frames.
    pub fn oracle(dim: usize, seed: u64) -> Self {
        Self {
            fast: Arc::new(OracleDetector::default()),
            strong: Arc::new(OracleDetector::default()),
            ..Self::deterministic(dim, seed)
        }
    }
}

/// One line of the track log: `frame,id,class,x1,y1,x2,y2,conf`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackLogLine {
    pub frame: u64,
    /// Track id, or -1 for untracked raw detections.
    pub id: i64,
    pub class_id: u32,
    pub bbox: BBox,
    pub conf: f64,
}

impl fmt::Display for TrackLogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{:.2},{:.2},{:.2},{:.2},{:.4}",
            self.frame,
            self.id,
            self.class_id,
            self.bbox.x1,
            self.bbox.y1,
            self.bbox.x2,
            self.bbox.y2,
            self.conf
        )
    }
}

pub fn render_log(lines: &[TrackLogLine]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}

fn track_lines(frame: u64, tracks: &[Track]) -> Vec<TrackLogLine> {
    tracks
        .iter()
        .map(|t| TrackLogLine {
            frame,
            id: t.id as i64,
            class_id: t.class_id,
            bbox: t.bbox(),
            conf: t.conf_smooth,
        })
        .collect()
}

fn raw_lines(frame: u64, dets: &[Detection]) -> Vec<TrackLogLine> {
    dets.iter()
        .map(|d| TrackLogLine {
            frame,
            id: -1,
            class_id: d.class_id,
            bbox: d.bbox,
            conf: d.conf,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Injection {
    pub frame: u64,
    /// Time the detection was injected, on the source clock.
    pub at_ms: f64,
    pub k: u32,
}

/// Everything a pipeline run produces.
pub struct RunOutput {
    pub log: Vec<TrackLogLine>,
    pub latency: LatencyReport,
    /// Intervals between consecutive safety-path outputs.
    pub safety_periods_ms: Vec<f64>,
    pub injections: Vec<Injection>,
    /// Versions of the slot records the quality worker consumed, in order.
    pub slot_versions: Vec<u64>,
    pub errors: Vec<String>,
    pub db: SedDb,
}

fn tag(dets: Vec<Detection>, source: Stream, conf_thresh: f64) -> Vec<Detection> {
    dets.into_iter()
        .filter(|d| d.conf >= conf_thresh)
        .map(|d| Detection { source, ..d })
        .collect()
}

/// Fast detector on the raw frame, confidence-thresholded.
pub fn safety_detect(
    frame: &Frame,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>, PipelineError> {
    Ok(tag(
        models.fast.detect(frame, &frame.raster)?,
        Stream::Safety,
        cfg.conf_thresh,
    ))
}

/// What the quality worker hands to the analytics worker.
#[derive(Clone, Debug)]
pub struct AnalyticsInput {
    pub frame: Frame,
    pub enhanced: Arc<Raster>,
    pub filters: FilterConfig,
    /// Mean quality-stream confidence minus mean safety-stream confidence.
    pub proxy_delta: f64,
}

#[derive(Clone, Debug)]
pub struct QualityOutput {
    pub estimate: WeatherEstimate,
    pub report: Option<EnhanceReport>,
    pub fused: Vec<Detection>,
    pub analytics: AnalyticsInput,
}

fn mean_conf(dets: &[Detection]) -> f64 {
    if dets.is_empty() {
        0.0
    } else {
        dets.iter().map(|d| d.conf).sum::<f64>() / dets.len() as f64
    }
}

/// Estimate, enhance, detect on both streams and fuse.
pub fn quality_stage(
    frame: &Frame,
    slot: Option<&SlotRecord>,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<QualityOutput, PipelineError> {
    let raw = &frame.raster;
    let flags = cfg.ablation;
    let stats = lab_stats(raw)?;
    let mut estimate = resolve_with(classify(&stats), slot, cfg.spread_threshold);
    if flags.fixed_severity_0_6 {
        estimate.severity = 0.6;
    }
    let filters = slot
        .and_then(|s| s.recommendation.clone())
        .unwrap_or_else(|| cfg.filters.clone());

    let rmap = if flags.pee_uniform_half {
        ReliabilityMap::uniform(raw.width(), raw.height(), 0.5)
    } else {
        entropy_map_rgb(raw)?
    };
    let (enhanced, report) = if flags.cape_passthrough {
        (Arc::clone(raw), None)
    } else {
        let (out, rep) = enhance_with(raw, &estimate, &filters, cfg.enhance)?;
        (Arc::new(out), Some(rep))
    };

    let ds = safety_detect(frame, models, cfg)?;
    let dq = tag(
        models.strong.detect(frame, &enhanced)?,
        Stream::Quality,
        cfg.conf_thresh,
    );
    let proxy_delta = mean_conf(&dq) - mean_conf(&ds);
    let quality_in: &[Detection] = if flags.egnms_s_only { &[] } else { &dq };
    let fused = fuse(&ds, quality_in, &rmap, cfg.conf_thresh, cfg.nms_iou)?;
    Ok(QualityOutput {
        estimate,
        report,
        fused,
        analytics: AnalyticsInput {
            frame: frame.clone(),
            enhanced,
            filters,
            proxy_delta,
        },
    })
}

/// Zero-shot label, embedding, recommendation and online append.
pub fn analytics_stage(
    input: &AnalyticsInput,
    models: &Models,
    db: &mut SedDb,
    prompts: &[Prompt],
    version: u64,
) -> Result<SlotRecord, PipelineError> {
    let scores = models.zero_shot.classify_prompts(&input.frame, prompts)?;
    let label = top_label(prompts, &scores).unwrap_or(Condition::Clear);
    let embedding = models.embedder.embed(&input.frame.raster)?;
    let recommendation = if db.dim() == embedding.len() {
        db.recommend(&embedding)?.map(|(params, _)| params)
    } else {
        None
    };
    if db.dim() == embedding.len() {
        db.append(SedEntry {
            embedding,
            condition: label,
            filter_params: input.filters.clone(),
            delta_f1: input.proxy_delta,
        })?;
    }
    Ok(SlotRecord {
        clip_label: label,
        clip_scores: prompts.iter().map(|p| p.label).zip(scores).collect(),
        recommendation,
        version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_parsing_and_flags() {
        assert_eq!("a4".parse::<Ablation>().unwrap(), Ablation::A4);
        assert!("A9".parse::<Ablation>().is_err());
        let f = AblationFlags::from_ids(&[Ablation::A1, Ablation::A6]);
        assert!(f.blocking_single_thread && f.ktt_raw_detections && !f.cape_passthrough);
    }

    #[test]
    fn log_line_format() {
        let l = TrackLogLine {
            frame: 7,
            id: -1,
            class_id: 2,
            bbox: BBox::new(1.0, 2.5, 10.125, 20.0).unwrap(),
            conf: 0.123456,
        };
        assert_eq!(l.to_string(), "7,-1,2,1.00,2.50,10.12,20.00,0.1235");
    }
}
