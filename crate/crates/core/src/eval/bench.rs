use super::{aggregate, flag, match_image, render_jsonl, CorpusImage, Counts, EvalError, EvalRecord, Flag, Summary, Variant, MATCH_IOU};
use crate::cape::{enhance_with, EnhanceOptions, FilterConfig};
use crate::detect::Detector;
use crate::egnms::CONF_THRESHOLD;
use crate::frame::{Frame, FrameTruth};
use crate::imaging::lab_stats;
use crate::pipeline::{run_simulated, Ablation, AblationFlags, LatencyReport, Models, PipelineConfig};
use crate::sed::SedDb;
use crate::wem::{classify, severity_for, Condition, WeatherEstimate};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How each image picks its enhancement branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Routing {
    /// The annotated condition label (upper-bound routing).
    #[default]
    GtLabel,
    /// The heuristic weather estimate.
    Wem,
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Routing::GtLabel => "gt_label",
            Routing::Wem => "wem",
        })
    }
}

impl FromStr for Routing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt_label" => Ok(Routing::GtLabel),
            "wem" => Ok(Routing::Wem),
            other => Err(format!("unknown routing {other:?} (expected gt_label or wem)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub filters: FilterConfig,
    pub routing: Routing,
    pub conf_thresh: f64,
    pub match_iou: f64,
    /// Only the enhancement-side flags (fixed severity, passthrough) apply
    /// to offline evaluation.
    pub ablation: AblationFlags,
    pub enhance: EnhanceOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            filters: FilterConfig::default(),
            routing: Routing::GtLabel,
            conf_thresh: CONF_THRESHOLD,
            match_iou: MATCH_IOU,
            ablation: AblationFlags::default(),
            enhance: EnhanceOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: String,
    /// Grouping label: the annotated condition, or the routed one when the
    /// image carries no label.
    pub condition: Condition,
    pub c1: Counts,
    pub c2: Counts,
}

impl ImageResult {
    pub fn delta_f1(&self) -> f64 {
        self.c2.f1() - self.c1.f1()
    }

    pub fn flag(&self) -> Flag {
        flag(self.delta_f1())
    }

    pub fn records(&self) -> [EvalRecord; 2] {
        let f = self.flag();
        [
            EvalRecord::new(&self.image, Variant::C1, self.c1, f),
            EvalRecord::new(&self.image, Variant::C2, self.c2, f),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub results: Vec<ImageResult>,
    pub summary: Summary,
}

impl BenchmarkReport {
    pub fn jsonl(&self) -> String {
        render_jsonl(&self.results)
    }
}

fn route(img: &CorpusImage, cfg: &BenchmarkConfig) -> Result<WeatherEstimate, EvalError> {
    let stats = lab_stats(&img.raster)?;
    let mut est = match cfg.routing {
        Routing::GtLabel => {
            let c = img
                .gt
                .condition
                .ok_or_else(|| EvalError::MissingLabel(img.gt.image.clone()))?;
            WeatherEstimate::fixed(c, severity_for(c, &stats))
        }
        Routing::Wem => classify(&stats),
    };
    if cfg.ablation.fixed_severity_0_6 {
        est.severity = 0.6;
    }
    Ok(est)
}

/// Runs `detector` on every original image (C1) and on its enhancement (C2),
/// scoring both against the same ground truth.
pub fn run_benchmark(
    corpus: &[CorpusImage],
    detector: &dyn Detector,
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport, EvalError> {
    let mut results = Vec::with_capacity(corpus.len());
    for (i, img) in corpus.iter().enumerate() {
        let est = route(img, cfg)?;
        let frame = Frame {
            raster: img.raster.clone(),
            index: i as u64,
            capture_ms: 0.0,
            truth: Some(
                FrameTruth {
                    condition: img.gt.condition,
                    severity: img.gt.severity,
                    boxes: img.gt.boxes.clone(),
                }
                .into(),
            ),
        };
        let score = |dets: &[crate::geometry::Detection]| match_image(dets, &img.gt.boxes, cfg.match_iou, cfg.conf_thresh);
        let c1 = score(&detector.detect(&frame, &img.raster)?);
        let c2 = if cfg.ablation.cape_passthrough {
            score(&detector.detect(&frame, &img.raster)?)
        } else {
            let (enhanced, _) = enhance_with(&img.raster, &est, &cfg.filters, cfg.enhance)?;
            score(&detector.detect(&frame, &enhanced)?)
        };
        results.push(ImageResult {
            image: img.gt.image.clone(),
            condition: img.gt.condition.unwrap_or(est.condition),
            c1,
            c2,
        });
    }
    let summary = aggregate(&results);
    Ok(BenchmarkReport { results, summary })
}

/// One configuration of an ablation sweep: the offline benchmark plus a
/// simulated pipeline run over the corpus as a frame sequence.
#[derive(Clone, Debug)]
pub struct AblationRun {
    /// `None` is the full system.
    pub id: Option<Ablation>,
    pub summary: Summary,
    pub latency: LatencyReport,
    pub track_lines: usize,
}

impl AblationRun {
    pub fn label(&self) -> String {
        match self.id {
            Some(a) => format!("{a} ({})", a.describe()),
            None => "full".to_string(),
        }
    }
}

pub fn ablate(
    corpus: &[CorpusImage],
    models: &Models,
    bench: &BenchmarkConfig,
    pipeline: &PipelineConfig,
    ids: &[Ablation],
) -> Result<Vec<AblationRun>, EvalError> {
    let frames: Vec<Frame> = corpus
        .iter()
        .enumerate()
        .map(|(i, img)| Frame {
            raster: img.raster.clone(),
            index: i as u64,
            capture_ms: i as f64 * pipeline.period_ms,
            truth: Some(
                FrameTruth {
                    condition: img.gt.condition,
                    severity: img.gt.severity,
                    boxes: img.gt.boxes.clone(),
                }
                .into(),
            ),
        })
        .collect();
    std::iter::once(None)
        .chain(ids.iter().copied().map(Some))
        .map(|id| {
            let flags = id.map_or(AblationFlags::default(), |a| AblationFlags::default().with(a));
            let report = run_benchmark(
                corpus,
                models.strong.as_ref(),
                &BenchmarkConfig {
                    ablation: flags,
                    ..bench.clone()
                },
            )?;
            let cfg = PipelineConfig {
                ablation: flags,
                ..pipeline.clone()
            };
            let run = run_simulated(&frames, models, &cfg, SedDb::new(models.embedder.dim()));
            Ok(AblationRun {
                id,
                summary: report.summary,
                latency: run.latency,
                track_lines: run.log.len(),
            })
        })
        .collect()
}

pub fn render_ablations(runs: &[AblationRun]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<44} {:>8} {:>8} {:>9} {:>12} {:>8}",
        "config", "C2 F1", "dF1", "dRecall", "S period ms", "tracks"
    );
    for r in runs {
        let (_, c2) = r.summary.macro_weighted();
        let period = r.latency.get("safety_period").map_or(0.0, |s| s.mean_ms);
        let _ = writeln!(
            s,
            "{:<44} {:>8.3} {:>+8.3} {:>+9.4} {:>12.1} {:>8}",
            r.label(),
            c2,
            r.summary.delta_f1(),
            r.summary.delta_recall(),
            period,
            r.track_lines
        );
    }
    s
}
