//! Condition-adaptive enhancement: morphological derain, dark-channel-prior
//! dehazing and CLAHE for sand/snow, with parameters from a JSON config.

use crate::imaging::{
    bilateral, clahe, from_lab, gamma_correct, median_filter, min_filter, morph_open_vertical,
    telea_inpaint, to_lab, ClaheParams, ImagingError, Raster,
};
use crate::wem::{Condition, WeatherEstimate};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CapeError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("atmospheric light is zero in channel {channel}; frame is degenerate")]
    DegenerateAtmosphere { channel: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InpaintMethod {
    #[serde(rename = "TELEA", alias = "telea")]
    Telea,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DehazeMethod {
    #[serde(rename = "DCP", alias = "dcp")]
    Dcp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainParams {
    pub inpaint_method: InpaintMethod,
    pub inpaint_radius: i64,
    pub clahe_clip: f64,
    pub bilateral_d: i64,
    pub bilateral_sigma: f64,
    /// Luma residual above the 5x5 median that marks a streak pixel.
    pub streak_threshold: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            inpaint_method: InpaintMethod::Telea,
            inpaint_radius: 3,
            clahe_clip: 1.5,
            bilateral_d: 5,
            bilateral_sigma: 40.0,
            streak_threshold: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FogParams {
    pub method: DehazeMethod,
    pub dcp_kernel: i64,
    pub atm_pct: f64,
    pub post_clahe_clip: f64,
}

impl Default for FogParams {
    fn default() -> Self {
        Self {
            method: DehazeMethod::Dcp,
            dcp_kernel: 15,
            atm_pct: 0.001,
            post_clahe_clip: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheGroup {
    pub clahe_clip: f64,
}

impl Default for ClaheGroup {
    fn default() -> Self {
        Self { clahe_clip: 2.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub rain: RainParams,
    pub fog: FogParams,
    pub sand: ClaheGroup,
    pub snow: ClaheGroup,
}

fn require_positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: key.into(),
            reason: format!("must be positive, got {v}"),
        })
    }
}

fn require_odd(key: &str, v: i64) -> Result<(), ConfigError> {
    require_positive(key, v as f64)?;
    if v % 2 == 1 {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: key.into(),
            reason: format!("must be odd, got {v}"),
        })
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_positive("rain.inpaint_radius", self.rain.inpaint_radius as f64)?;
        require_positive("rain.clahe_clip", self.rain.clahe_clip)?;
        require_odd("rain.bilateral_d", self.rain.bilateral_d)?;
        require_positive("rain.bilateral_sigma", self.rain.bilateral_sigma)?;
        require_positive("rain.streak_threshold", self.rain.streak_threshold)?;
        require_odd("fog.dcp_kernel", self.fog.dcp_kernel)?;
        if !(self.fog.atm_pct > 0.0 && self.fog.atm_pct < 1.0) {
            return Err(ConfigError::Invalid {
                key: "fog.atm_pct".into(),
                reason: format!("must lie in (0, 1), got {}", self.fog.atm_pct),
            });
        }
        require_positive("fog.post_clahe_clip", self.fog.post_clahe_clip)?;
        require_positive("sand.clahe_clip", self.sand.clahe_clip)?;
        require_positive("snow.clahe_clip", self.snow.clahe_clip)?;
        Ok(())
    }

    /// The numeric fields in a fixed order, for compact binary storage.
    pub fn numeric_fields(&self) -> [f64; 10] {
        [
            self.rain.inpaint_radius as f64,
            self.rain.clahe_clip,
            self.rain.bilateral_d as f64,
            self.rain.bilateral_sigma,
            self.rain.streak_threshold,
            self.fog.dcp_kernel as f64,
            self.fog.atm_pct,
            self.fog.post_clahe_clip,
            self.sand.clahe_clip,
            self.snow.clahe_clip,
        ]
    }

    /// Inverse of [`FilterConfig::numeric_fields`].
    pub fn from_numeric_fields(v: [f64; 10]) -> Self {
        Self {
            rain: RainParams {
                inpaint_method: InpaintMethod::Telea,
                inpaint_radius: v[0].round() as i64,
                clahe_clip: v[1],
                bilateral_d: v[2].round() as i64,
                bilateral_sigma: v[3],
                streak_threshold: v[4],
            },
            fog: FogParams {
                method: DehazeMethod::Dcp,
                dcp_kernel: v[5].round() as i64,
                atm_pct: v[6],
                post_clahe_clip: v[7],
            },
            sand: ClaheGroup { clahe_clip: v[8] },
            snow: ClaheGroup { clahe_clip: v[9] },
        }
    }
}

/// Parses and validates a config document; absent keys take defaults.
pub fn parse_config(text: &str) -> Result<FilterConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: FilterConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<FilterConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub condition: Condition,
    pub severity: f64,
    /// Streak pixel fraction (rain only).
    pub rho_rain: Option<f64>,
    /// Haze removal strength (fog only).
    pub alpha: Option<f64>,
    /// Brightness gamma applied in the derain branch, if any.
    pub gamma: Option<f64>,
    pub timings: Vec<StageTiming>,
}

impl EnhanceReport {
    fn new(condition: Condition, severity: f64) -> Self {
        Self {
            condition,
            severity,
            rho_rain: None,
            alpha: None,
            gamma: None,
            timings: Vec::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.into(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnhanceOptions {
    /// Route fog frames darker than this mean luma to CLAHE instead of DCP.
    pub night_gate: Option<f64>,
}

/// Haze removal strength for a severity in [0,1].
pub fn alpha_for_severity(s: f64) -> f64 {
    0.5 + 0.4 * s.clamp(0.0, 1.0)
}

/// Brightening gamma for a mean luma, or `None` when the frame is bright enough.
pub fn gamma_for_luma(mu_l: f64) -> Option<f64> {
    (mu_l < 130.0).then(|| (130.0 / mu_l.max(30.0)).clamp(1.05, 1.40))
}

/// Applies `f` to the luminance plane: LAB L for colour frames, the plane
/// itself for gray ones.
fn map_luma(
    frame: &Raster,
    f: impl FnOnce(Raster) -> Result<Raster, CapeError>,
) -> Result<Raster, CapeError> {
    if frame.channels() == 1 {
        return f(frame.clone());
    }
    let mut lab = to_lab(frame)?;
    let l = f(lab.channel(0))?;
    lab.set_channel(0, &l)?;
    Ok(from_lab(&lab)?)
}

fn luma(frame: &Raster) -> Result<Raster, CapeError> {
    Ok(if frame.channels() == 1 {
        frame.clone()
    } else {
        to_lab(frame)?.channel(0)
    })
}

fn clahe_on_luma(frame: &Raster, clip: f64) -> Result<Raster, CapeError> {
    map_luma(frame, |l| Ok(clahe(&l, ClaheParams::new(clip))?))
}

/// Dispatches to the branch for `est.condition`.
pub fn enhance(
    frame: &Raster,
    est: &WeatherEstimate,
    cfg: &FilterConfig,
) -> Result<(Raster, EnhanceReport), CapeError> {
    enhance_with(frame, est, cfg, EnhanceOptions::default())
}

pub fn enhance_with(
    frame: &Raster,
    est: &WeatherEstimate,
    cfg: &FilterConfig,
    opts: EnhanceOptions,
) -> Result<(Raster, EnhanceReport), CapeError> {
    let s = est.severity.clamp(0.0, 1.0);
    match est.condition {
        Condition::Clear => Ok((frame.clone(), EnhanceReport::new(Condition::Clear, s))),
        Condition::Rain => derain(frame, s, cfg),
        Condition::Fog => {
            if let Some(theta) = opts.night_gate {
                if luma(frame)?.mean() < theta {
                    let mut report = EnhanceReport::new(Condition::Fog, s);
                    let out = report.time("clahe", || clahe_on_luma(frame, cfg.sand.clahe_clip))?;
                    return Ok((out, report));
                }
            }
            dehaze_dcp(frame, s, cfg)
        }
        Condition::Sand | Condition::Snow => {
            let clip = if est.condition == Condition::Sand {
                cfg.sand.clahe_clip
            } else {
                cfg.snow.clahe_clip
            };
            let mut report = EnhanceReport::new(est.condition, s);
            let out = report.time("clahe", || clahe_on_luma(frame, clip))?;
            Ok((out, report))
        }
    }
}

/// Stage 1: bright vertical residuals above the local median.
/// Returns the opened mask (0/255) and its pixel fraction.
pub fn streak_mask(frame: &Raster, threshold: f64) -> Result<(Raster, f64), CapeError> {
    let l = luma(frame)?;
    let med = median_filter(&l, 5)?;
    let raw: Vec<u8> = l
        .data()
        .iter()
        .zip(med.data())
        .map(|(&v, &m)| if v as f64 - m as f64 > threshold { 255 } else { 0 })
        .collect();
    let raw = Raster::new(l.width(), l.height(), 1, raw)?;
    let mask = morph_open_vertical(&raw, 7)?;
    let marked = mask.data().iter().filter(|&&v| v != 0).count();
    let rho = marked as f64 / mask.pixel_count().max(1) as f64;
    Ok((mask, rho))
}

/// Stage 2: inpaint a sparse mask, median-blend a dense one, skip a
/// negligible one.
pub fn remove_streaks(
    frame: &Raster,
    mask: &Raster,
    rho: f64,
    radius: usize,
) -> Result<Raster, CapeError> {
    if rho <= 0.001 {
        return Ok(frame.clone());
    }
    if rho < 0.30 {
        return Ok(telea_inpaint(frame, mask, radius)?);
    }
    let med = median_filter(frame, 5)?;
    let ch = frame.channels();
    let mut out = frame.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        for c in 0..ch {
            let j = i * ch + c;
            let v = 0.5 * frame.data()[j] as f64 + 0.5 * med.data()[j] as f64;
            out.data_mut()[j] = v.round() as u8;
        }
    }
    Ok(out)
}

/// Five-stage rain removal.
pub fn derain(
    frame: &Raster,
    s: f64,
    cfg: &FilterConfig,
) -> Result<(Raster, EnhanceReport), CapeError> {
    let p = &cfg.rain;
    let mut report = EnhanceReport::new(Condition::Rain, s.clamp(0.0, 1.0));
    let (mask, rho) = report.time("streak_mask", || streak_mask(frame, p.streak_threshold))?;
    report.rho_rain = Some(rho);
    let radius = p.inpaint_radius.max(1) as usize;
    let cleaned = report.time("inpaint", || remove_streaks(frame, &mask, rho, radius))?;

    let mu_l = luma(&cleaned)?.mean();
    let gamma = gamma_for_luma(mu_l);
    report.gamma = gamma;
    let clip = p.clahe_clip;
    let toned = report.time("gamma_clahe", || {
        map_luma(&cleaned, |l| {
            let l = match gamma {
                Some(g) => gamma_correct(&l, g)?,
                None => l,
            };
            Ok(clahe(&l, ClaheParams::new(clip))?)
        })
    })?;
    let d = p.bilateral_d.max(1) as usize;
    let out = report.time("bilateral", || bilateral(&toned, d, p.bilateral_sigma))?;
    Ok((out, report))
}

/// Dark-channel transmission estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub width: usize,
    pub height: usize,
    /// Per-pixel transmission clamped to [0.1, 1].
    pub map: Vec<f64>,
    /// Atmospheric light per channel.
    pub atmosphere: [f64; 3],
}

/// Estimates atmospheric light and the clamped transmission map.
pub fn transmission_map(
    frame: &Raster,
    alpha: f64,
    kernel: usize,
    atm_pct: f64,
) -> Result<Transmission, CapeError> {
    let rgb = frame.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let n = w * h;
    if n == 0 {
        return Err(ImagingError::InvalidRaster("empty frame".into()).into());
    }
    let px = |i: usize, c: usize| rgb.data()[i * 3 + c] as f64;
    let min_c: Vec<f64> = (0..n).map(|i| px(i, 0).min(px(i, 1)).min(px(i, 2))).collect();
    let dark = min_filter(&min_c, w, h, kernel);

    let count = ((atm_pct * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dark[b].total_cmp(&dark[a]).then(a.cmp(&b)));
    let mut atmosphere = [0.0; 3];
    for &i in &order[..count] {
        for (c, a) in atmosphere.iter_mut().enumerate() {
            *a += px(i, c);
        }
    }
    for (c, a) in atmosphere.iter_mut().enumerate() {
        *a /= count as f64;
        if *a == 0.0 {
            return Err(CapeError::DegenerateAtmosphere { channel: c });
        }
    }

    let ratio: Vec<f64> = (0..n)
        .map(|i| (0..3).map(|c| px(i, c) / atmosphere[c]).fold(f64::INFINITY, f64::min))
        .collect();
    let map = min_filter(&ratio, w, h, kernel)
        .into_iter()
        .map(|m| (1.0 - alpha * m).clamp(0.1, 1.0))
        .collect();
    Ok(Transmission {
        width: w,
        height: h,
        map,
        atmosphere,
    })
}

/// Inverts the scattering model with a given transmission estimate.
pub fn recover_radiance(frame: &Raster, t: &Transmission) -> Raster {
    let rgb = frame.to_rgb();
    let mut out = rgb.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let tx = t.map[i];
        for c in 0..3 {
            let a = t.atmosphere[c];
            let j = (rgb.data()[i * 3 + c] as f64 - a) / tx + a;
            px[c] = j.round().clamp(0.0, 255.0) as u8;
        }
    }
    if frame.channels() == 1 {
        out.to_gray()
    } else {
        out
    }
}

/// Severity-continuous dark-channel-prior dehazing followed by CLAHE on L.
pub fn dehaze_dcp(
    frame: &Raster,
    s: f64,
    cfg: &FilterConfig,
) -> Result<(Raster, EnhanceReport), CapeError> {
    let s = s.clamp(0.0, 1.0);
    let alpha = alpha_for_severity(s);
    let mut report = EnhanceReport::new(Condition::Fog, s);
    report.alpha = Some(alpha);
    let kernel = cfg.fog.dcp_kernel.max(1) as usize;
    let t = report.time("transmission", || {
        transmission_map(frame, alpha, kernel, cfg.fog.atm_pct)
    })?;
    let recovered = report.time("recover", || recover_radiance(frame, &t));
    let out = report.time("post_clahe", || clahe_on_luma(&recovered, cfg.fog.post_clahe_clip))?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, FilterConfig::default());
        assert_eq!(cfg.rain.inpaint_method, InpaintMethod::Telea);
        assert_eq!(cfg.rain.inpaint_radius, 3);
        assert_eq!(cfg.rain.clahe_clip, 1.5);
        assert_eq!(cfg.rain.bilateral_d, 5);
        assert_eq!(cfg.rain.bilateral_sigma, 40.0);
        assert_eq!(cfg.fog.method, DehazeMethod::Dcp);
        assert_eq!(cfg.fog.dcp_kernel, 15);
        assert_eq!(cfg.fog.atm_pct, 0.001);
        assert_eq!(cfg.sand.clahe_clip, 2.0);
        assert_eq!(cfg.snow.clahe_clip, 2.0);
    }

    #[test]
    fn partial_override() {
        let cfg = parse_config(r#"{"fog": {"dcp_kernel": 7}}"#).unwrap();
        let mut expected = FilterConfig::default();
        expected.fog.dcp_kernel = 7;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn errors_name_the_key() {
        match parse_config(r#"{"rain": {"inpaint_radius": -3}}"#) {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "rain.inpaint_radius"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config(r#"{"rain": {"clahe_clip": "big"}}"#) {
            Err(ConfigError::Parse { key, .. }) => assert_eq!(key, "rain.clahe_clip"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config(r#"{"fog": {"atm_pct": 1.5}}"#) {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "fog.atm_pct"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config(r#"{"fog": {"kernel": 7}}"#),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn numeric_fields_round_trip() {
        let mut cfg = FilterConfig::default();
        cfg.fog.dcp_kernel = 9;
        cfg.snow.clahe_clip = 3.25;
        assert_eq!(FilterConfig::from_numeric_fields(cfg.numeric_fields()), cfg);
    }

    #[test]
    fn alpha_and_gamma() {
        assert!((alpha_for_severity(0.5) - 0.7).abs() < 1e-15);
        assert_eq!(alpha_for_severity(2.0), 0.9);
        assert!((gamma_for_luma(100.0).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(gamma_for_luma(20.0), Some(1.40));
        assert_eq!(gamma_for_luma(125.0), Some(1.05));
        assert_eq!(gamma_for_luma(130.0), None);
    }

    #[test]
    fn clear_is_passthrough() {
        let r = Raster::from_fn_rgb(20, 10, |x, y| [x as u8 * 11, y as u8 * 20, 7]);
        let (out, rep) = enhance(&r, &WeatherEstimate::fixed(Condition::Clear, 0.3), &FilterConfig::default()).unwrap();
        assert_eq!(out, r);
        assert_eq!(rep.alpha, None);
    }

    #[test]
    fn snow_keeps_constant_frame_constant() {
        let r = Raster::filled(32, 24, 3, 140);
        let (out, _) = enhance(&r, &WeatherEstimate::fixed(Condition::Snow, 0.8), &FilterConfig::default()).unwrap();
        let first = &out.data()[..3];
        assert!(out.data().chunks(3).all(|p| p == first));
    }

    #[test]
    fn fog_report_alpha() {
        let r = Raster::from_fn_rgb(32, 32, |x, y| [100 + x as u8, 120, 90 + y as u8]);
        let (_, rep) = enhance(&r, &WeatherEstimate::fixed(Condition::Fog, 0.5), &FilterConfig::default()).unwrap();
        assert!((rep.alpha.unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn uniform_gray_is_dcp_fixed_point() {
        let r = Raster::filled(20, 20, 3, 150);
        for s in [0.0, 0.5, 1.0] {
            let t = transmission_map(&r, alpha_for_severity(s), 15, 0.001).unwrap();
            assert_eq!(t.atmosphere, [150.0; 3]);
            let expected = (1.0 - alpha_for_severity(s)).max(0.1);
            assert!(t.map.iter().all(|&v| (v - expected).abs() < 1e-12));
            assert_eq!(recover_radiance(&r, &t), r);
        }
    }

    #[test]
    fn black_frame_is_degenerate() {
        let r = Raster::filled(8, 8, 3, 0);
        assert!(matches!(
            dehaze_dcp(&r, 0.5, &FilterConfig::default()),
            Err(CapeError::DegenerateAtmosphere { .. })
        ));
    }

    #[test]
    fn streak_free_frame_skips_inpainting() {
        let r = Raster::filled(30, 30, 3, 90);
        let (_, rep) = derain(&r, 0.5, &FilterConfig::default()).unwrap();
        assert!(rep.rho_rain.unwrap() < 0.001);
    }

    #[test]
    fn enhance_keeps_shape() {
        let r = Raster::from_fn_rgb(21, 13, |x, y| [(x * 12) as u8, (y * 19) as u8, 60]);
        let cfg = FilterConfig::default();
        for c in Condition::ALL {
            let (out, _) = enhance(&r, &WeatherEstimate::fixed(c, 0.4), &cfg).unwrap();
            assert_eq!((out.width(), out.height(), out.channels()), (21, 13, 3));
        }
    }
}
