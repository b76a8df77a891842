//! Python bindings: images, weather estimation, enhancement, reliability
//! maps, box utilities, tracking, synthetic corpora and the benchmark.

use cadenet_core::cape::{enhance_with, load_config, EnhanceOptions, FilterConfig};
use cadenet_core::detect::{ContrastDetector, Detector, OracleDetector};
use cadenet_core::eval::{load_corpus, run_benchmark, write_corpus, BenchmarkConfig, ClassMap, Routing};
use cadenet_core::geometry::{self, BBox, Detection, Stream};
use cadenet_core::imaging::{self, lab_stats, Raster};
use cadenet_core::ktt::{Tracker as CoreTracker, TrackerConfig};
use cadenet_core::pee::entropy_map_rgb;
use cadenet_core::pipeline::{render_log, run_simulated, synthetic_frames, Models, PipelineConfig};
use cadenet_core::sed::SedDb;
use cadenet_core::synth;
use cadenet_core::wem::{classify, severity_for, Condition, WeatherEstimate};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_condition(s: &str) -> PyResult<Condition> {
    s.parse::<Condition>().map_err(value_err)
}

fn bbox(t: (f64, f64, f64, f64)) -> PyResult<BBox> {
    BBox::new(t.0, t.1, t.2, t.3).map_err(value_err)
}

fn bbox_tuple(b: &BBox) -> (f64, f64, f64, f64) {
    (b.x1, b.y1, b.x2, b.y2)
}

/// An 8-bit interleaved image (1 or 3 channels).
#[pyclass(name = "Image", frozen)]
pub struct PyImage {
    raster: Raster,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Self> {
        Raster::new(width, height, channels, data)
            .map(|raster| Self { raster })
            .map_err(value_err)
    }

    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        imaging::read_image(&path).map(|raster| Self { raster }).map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        imaging::write_image(&path, &self.raster).map_err(io_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.raster.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.raster.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.raster.channels()
    }

    fn tobytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.raster.data())
    }

    fn mean(&self) -> f64 {
        self.raster.mean()
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}x{})",
            self.raster.width(),
            self.raster.height(),
            self.raster.channels()
        )
    }
}

fn estimate_dict<'py>(py: Python<'py>, est: &WeatherEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("condition", est.condition.as_str())?;
    d.set_item("severity", est.severity)?;
    d.set_item("spread", est.spread)?;
    Ok(d)
}

/// Colour statistics and the heuristic weather estimate of an RGB image.
#[pyfunction]
fn estimate_weather<'py>(py: Python<'py>, image: &PyImage) -> PyResult<Bound<'py, PyDict>> {
    let s = lab_stats(&image.raster).map_err(value_err)?;
    let d = estimate_dict(py, &classify(&s))?;
    d.set_item("mu_l", s.mu_l)?;
    d.set_item("sigma_l", s.sigma_l)?;
    d.set_item("mu_s", s.mu_s)?;
    d.set_item("edge_density", s.rho_e)?;
    d.set_item("vertical_ratio", s.r_v)?;
    Ok(d)
}

/// Enhance an image. Without `condition` the branch is estimated.
#[pyfunction]
#[pyo3(signature = (image, condition=None, severity=None, config=None, night_gate=None))]
fn enhance<'py>(
    py: Python<'py>,
    image: &PyImage,
    condition: Option<&str>,
    severity: Option<f64>,
    config: Option<PathBuf>,
    night_gate: Option<f64>,
) -> PyResult<(PyImage, Bound<'py, PyDict>)> {
    let cfg = match config {
        Some(p) => load_config(&p).map_err(value_err)?,
        None => FilterConfig::default(),
    };
    let stats = lab_stats(&image.raster).map_err(value_err)?;
    let mut est = match condition {
        Some(c) => {
            let c = parse_condition(c)?;
            WeatherEstimate::fixed(c, severity_for(c, &stats))
        }
        None => classify(&stats),
    };
    if let Some(s) = severity {
        if !(0.0..=1.0).contains(&s) {
            return Err(value_err(format!("severity must lie in [0, 1], got {s}")));
        }
        est.severity = s;
    }
    let (out, report) =
        enhance_with(&image.raster, &est, &cfg, EnhanceOptions { night_gate }).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("condition", report.condition.as_str())?;
    d.set_item("severity", report.severity)?;
    d.set_item("alpha", report.alpha)?;
    d.set_item("rho_rain", report.rho_rain)?;
    d.set_item("gamma", report.gamma)?;
    Ok((PyImage { raster: out }, d))
}

/// Patch reliability grid as `(cols, rows, values)` in row-major order.
#[pyfunction]
fn reliability_grid(image: &PyImage) -> PyResult<(usize, usize, Vec<f64>)> {
    let m = entropy_map_rgb(&image.raster).map_err(value_err)?;
    Ok((m.cols(), m.rows(), m.grid().to_vec()))
}

#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(geometry::iou(&bbox(a)?, &bbox(b)?))
}

/// Greedy NMS over `(box, class_id, conf)` triples; returns kept indices.
#[pyfunction]
#[pyo3(signature = (detections, iou_thresh=0.45))]
fn nms(detections: Vec<((f64, f64, f64, f64), u32, f64)>, iou_thresh: f64) -> PyResult<Vec<usize>> {
    let dets = to_detections(&detections)?;
    let kept = geometry::nms(&dets, iou_thresh);
    Ok(kept
        .iter()
        .filter_map(|k| dets.iter().position(|d| d == k))
        .collect())
}

fn to_detections(dets: &[((f64, f64, f64, f64), u32, f64)]) -> PyResult<Vec<Detection>> {
    dets.iter()
        .map(|&(b, class_id, conf)| Ok(Detection::new(bbox(b)?, class_id, conf, Stream::Safety)))
        .collect()
}

/// Minimum-cost assignment of a rectangular cost matrix.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    if cost.iter().any(|r| r.len() != cost.first().map_or(0, Vec::len)) {
        return Err(value_err("cost matrix rows differ in length"));
    }
    Ok(geometry::hungarian(&cost))
}

/// Kalman-filtered multi-object tracker.
#[pyclass(name = "Tracker")]
pub struct PyTracker {
    inner: CoreTracker,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (iou_gate=0.3, max_misses=3))]
    fn new(iou_gate: f64, max_misses: u32) -> Self {
        let cfg = TrackerConfig {
            iou_gate,
            max_misses,
            ..TrackerConfig::default()
        };
        Self {
            inner: CoreTracker::new(cfg),
        }
    }

    /// Advance one frame; returns confirmed tracks as `(id, class_id, box, conf)`.
    fn update(
        &mut self,
        detections: Vec<((f64, f64, f64, f64), u32, f64)>,
    ) -> PyResult<Vec<(u64, u32, (f64, f64, f64, f64), f64)>> {
        self.inner.update_frame(&to_detections(&detections)?);
        Ok(self
            .inner
            .confirmed()
            .map(|t| (t.id, t.class_id, bbox_tuple(&t.bbox()), t.conf_smooth))
            .collect())
    }

    /// Correct the track state `lag` frames after the detections were captured.
    fn inject(&mut self, detections: Vec<((f64, f64, f64, f64), u32, f64)>, lag: u32) -> PyResult<()> {
        self.inner.inject_async(&to_detections(&detections)?, lag);
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.tracks().len()
    }
}

/// Write a seeded synthetic corpus (PNG, VOC XML, manifest) to `out`.
#[pyfunction]
#[pyo3(signature = (out, count=50, conditions=vec!["fog".to_string()], width=160, height=120, seed=0))]
fn synth_corpus(
    out: PathBuf,
    count: usize,
    conditions: Vec<String>,
    width: usize,
    height: usize,
    seed: u64,
) -> PyResult<usize> {
    let conds = conditions
        .iter()
        .map(|c| parse_condition(c))
        .collect::<PyResult<Vec<_>>>()?;
    if conds.is_empty() {
        return Err(value_err("at least one condition is required"));
    }
    let images = synth::corpus(count, &conds, width, height, seed);
    write_corpus(&out, &images, &ClassMap::default()).map_err(io_err)?;
    Ok(images.len())
}

/// Detect on original and enhanced images of a corpus directory. Returns
/// the rendered summary and the per-image JSON lines.
#[pyfunction]
#[pyo3(signature = (corpus, routing="gt_label", detector="contrast", config=None))]
fn benchmark(
    corpus: PathBuf,
    routing: &str,
    detector: &str,
    config: Option<PathBuf>,
) -> PyResult<(String, String)> {
    let loaded = load_corpus(&corpus, &ClassMap::default()).map_err(io_err)?;
    if loaded.images.is_empty() {
        return Err(value_err(format!("{}: no usable images", corpus.display())));
    }
    let det: Box<dyn Detector> = match detector {
        "contrast" => Box::new(ContrastDetector::strong()),
        "oracle" => Box::new(OracleDetector::default()),
        other => return Err(value_err(format!("unknown detector {other:?}"))),
    };
    let cfg = BenchmarkConfig {
        filters: match config {
            Some(p) => load_config(&p).map_err(value_err)?,
            None => FilterConfig::default(),
        },
        routing: routing.parse::<Routing>().map_err(value_err)?,
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&loaded.images, det.as_ref(), &cfg).map_err(value_err)?;
    Ok((report.summary.render(), report.jsonl()))
}

/// Simulated-clock pipeline over a synthetic video; returns the track log.
#[pyfunction]
#[pyo3(signature = (frames=90, condition="fog", severity=0.6, width=160, height=120, seed=0, dim=256))]
fn simulate(
    frames: usize,
    condition: &str,
    severity: f64,
    width: usize,
    height: usize,
    seed: u64,
    dim: usize,
) -> PyResult<String> {
    let cfg = PipelineConfig::default();
    let video = synthetic_frames(frames, parse_condition(condition)?, severity, width, height, seed, cfg.period_ms);
    let out = run_simulated(&video, &Models::deterministic(dim, seed), &cfg, SedDb::new(dim));
    Ok(render_log(&out.log))
}

#[pymodule]
pub fn cadenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(estimate_weather, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(reliability_grid, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_tuples_round_trip() {
        let b = bbox((1.0, 2.0, 3.0, 5.0)).unwrap();
        assert_eq!(bbox_tuple(&b), (1.0, 2.0, 3.0, 5.0));
    }

    #[test]
    fn detections_keep_order_and_class() {
        let dets = to_detections(&[((0.0, 0.0, 4.0, 4.0), 2, 0.5), ((1.0, 1.0, 3.0, 3.0), 0, 0.9)]).unwrap();
        assert_eq!(dets.iter().map(|d| d.class_id).collect::<Vec<_>>(), [2, 0]);
        assert_eq!(dets[1].conf, 0.9);
    }
}
