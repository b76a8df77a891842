use crate::CliError;
use cadenet_core::cape::{alpha_for_severity, load_config, FilterConfig};
use cadenet_core::egnms::{CONF_THRESHOLD, NMS_IOU};
use cadenet_core::eval::{FLAG_DEADBAND, MATCH_IOU};
use cadenet_core::ktt::TrackerConfig;
use cadenet_core::pipeline::{AblationFlags, CostModel, PipelineConfig, GPU_DISCIPLINE};
use cadenet_core::sed::DEFAULT_K;
use cadenet_core::wem::SPREAD_THRESHOLD;
use std::path::{Path, PathBuf};

/// Everything one CLI invocation needs beyond its input paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub config_path: Option<PathBuf>,
    pub filters: FilterConfig,
    pub conf_thresh: f64,
    pub match_iou: f64,
    pub nms_iou: f64,
    pub gate_iou: f64,
    pub spread_threshold: f64,
    pub period_ms: f64,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_path: None,
            filters: FilterConfig::default(),
            conf_thresh: CONF_THRESHOLD,
            match_iou: MATCH_IOU,
            nms_iou: NMS_IOU,
            gate_iou: TrackerConfig::default().iou_gate,
            spread_threshold: SPREAD_THRESHOLD,
            period_ms: 1000.0 / 30.0,
            ablation: AblationFlags::default(),
            seed: 0,
        }
    }
}

fn unit_interval(name: &str, v: f64, open_low: bool) -> Result<(), CliError> {
    let ok = if open_low { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(())
    } else {
        let range = if open_low { "(0, 1)" } else { "[0, 1]" };
        Err(CliError::Usage(format!("--{name} must lie in {range}, got {v}")))
    }
}

impl RunConfig {
    /// Loads the filter file when one is given.
    pub fn with_filters(mut self, path: Option<&Path>) -> Result<Self, CliError> {
        if let Some(p) = path {
            self.filters = load_config(p).map_err(|e| CliError::Data(e.to_string()))?;
            self.config_path = Some(p.to_path_buf());
        }
        Ok(self)
    }

    pub fn with_fps(mut self, fps: f64) -> Result<Self, CliError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(CliError::Usage(format!("--fps must be positive, got {fps}")));
        }
        self.period_ms = 1000.0 / fps;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        unit_interval("conf", self.conf_thresh, false)?;
        unit_interval("iou", self.match_iou, true)?;
        unit_interval("nms-iou", self.nms_iou, true)?;
        unit_interval("gate", self.gate_iou, true)?;
        unit_interval("spread", self.spread_threshold, false)?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let tracker = TrackerConfig {
            iou_gate: self.gate_iou,
            ..TrackerConfig::default()
        };
        PipelineConfig {
            period_ms: self.period_ms,
            filters: self.filters.clone(),
            tracker,
            conf_thresh: self.conf_thresh,
            nms_iou: self.nms_iou,
            spread_threshold: self.spread_threshold,
            ablation: self.ablation,
            ..PipelineConfig::default()
        }
    }
}

/// The defaults table printed after the top-level help, built from the
/// library constants so it cannot drift from them.
pub fn defaults_help() -> String {
    let f = FilterConfig::default();
    let t = TrackerConfig::default();
    let c = CostModel::default();
    format!(
        "Defaults:
  detection        conf {CONF_THRESHOLD}, match IoU {MATCH_IOU}, fusion NMS IoU {NMS_IOU}
  tracking         gate IoU {}, death after {} misses, born after {} hit
  weather          slot override below top-2 spread {SPREAD_THRESHOLD}
  flags            unchanged when |dF1| < {FLAG_DEADBAND}
  recommendation   k = {DEFAULT_K}, score = sim * exp(2 * dF1)
  rain             inpaint {:?} r={}, clahe_clip {}, bilateral d={} sigma={}, streak threshold {}
  fog              {:?} kernel {}, atm_pct {}, post clahe_clip {}, alpha = 0.5 + 0.4 s ({} at s=0.5)
  sand / snow      clahe_clip {} / {}
  camera           30 fps
  latency          {} warmup + {} timed calls (--cpu: 5 + 100)
  simulated costs  safety {} ms, quality {} ms, analytics {} ms

Environment:
  CADENET_CONFIG   default for --config",
        t.iou_gate,
        t.max_misses,
        t.min_hits,
        f.rain.inpaint_method,
        f.rain.inpaint_radius,
        f.rain.clahe_clip,
        f.rain.bilateral_d,
        f.rain.bilateral_sigma,
        f.rain.streak_threshold,
        f.fog.method,
        f.fog.dcp_kernel,
        f.fog.atm_pct,
        f.fog.post_clahe_clip,
        alpha_for_severity(0.5),
        f.sand.clahe_clip,
        f.snow.clahe_clip,
        GPU_DISCIPLINE.0,
        GPU_DISCIPLINE.1,
        c.safety_ms,
        c.quality_ms,
        c.analytics_ms,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let c = RunConfig::default();
        assert_eq!(
            (c.conf_thresh, c.match_iou, c.nms_iou, c.gate_iou, c.spread_threshold),
            (0.25, 0.5, 0.45, 0.3, 0.15)
        );
        c.validate().unwrap();
    }

    #[test]
    fn out_of_range_thresholds_are_usage_errors() {
        let c = RunConfig {
            nms_iou: 1.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Usage(_))));
        assert!(RunConfig::default().with_fps(0.0).is_err());
    }
}
