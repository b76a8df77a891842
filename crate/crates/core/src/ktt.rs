//! SORT-style Kalman tracker over `[cx, cy, a, h, vcx, vcy, va]` where `a` is
//! the aspect ratio w/h, with confidence smoothing and k-step injection of
//! late detections from the quality stream.

use crate::geometry::{hungarian, iou, BBox, Detection};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

pub type StateVec = SVector<f64, 7>;
pub type StateCov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;
type MeasCov = SMatrix<f64, 4, 4>;
type Obs = SMatrix<f64, 4, 7>;

const MIN_SHAPE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Process noise diagonal.
    pub process: [f64; 7],
    /// Measurement noise diagonal over (cx, cy, a, h).
    pub measurement: [f64; 4],
    /// Initial variance of the observed components.
    pub init_shape_var: f64,
    /// Initial variance of the velocity components.
    pub init_velocity_var: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process: [1.0, 1.0, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2],
            measurement: [1.0, 1.0, 1e-1, 1e-1],
            init_shape_var: 10.0,
            init_velocity_var: 1e3,
        }
    }
}

impl KalmanParams {
    fn q(&self) -> StateCov {
        StateCov::from_diagonal(&StateVec::from_row_slice(&self.process))
    }

    fn r(&self) -> MeasCov {
        MeasCov::from_diagonal(&Meas::from_row_slice(&self.measurement))
    }
}

/// Constant-velocity transition; `h` carries no velocity term.
pub fn transition() -> StateCov {
    let mut f = StateCov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> Obs {
    let mut h = Obs::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &StateCov) -> StateCov {
    (p + p.transpose()) * 0.5
}

pub fn measurement_of(b: &BBox) -> [f64; 4] {
    let (cx, cy) = b.center();
    [cx, cy, b.width() / b.height(), b.height()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub x: StateVec,
    pub p: StateCov,
}

impl KalmanState {
    pub fn from_bbox(b: &BBox, params: &KalmanParams) -> Self {
        let m = measurement_of(b);
        let x = StateVec::from_row_slice(&[m[0], m[1], m[2], m[3], 0.0, 0.0, 0.0]);
        let mut diag = [params.init_shape_var; 7];
        diag[4..].fill(params.init_velocity_var);
        Self {
            x,
            p: StateCov::from_diagonal(&StateVec::from_row_slice(&diag)),
        }
    }

    pub fn bbox(&self) -> BBox {
        let a = self.x[2].max(MIN_SHAPE);
        let h = self.x[3].max(MIN_SHAPE);
        let w = a * h;
        BBox {
            x1: self.x[0] - w / 2.0,
            y1: self.x[1] - h / 2.0,
            x2: self.x[0] + w / 2.0,
            y2: self.x[1] + h / 2.0,
        }
    }

    /// One constant-velocity step with process noise.
    pub fn predict(&self, params: &KalmanParams) -> Self {
        let mut x = self.x;
        if x[2] + x[6] <= 0.0 {
            x[6] = 0.0;
        }
        let f = transition();
        Self {
            x: f * x,
            p: symmetrize(&(f * self.p * f.transpose() + params.q())),
        }
    }

    /// Measurement update in Joseph form with measurement covariance `r`.
    pub fn update(&self, z: [f64; 4], r: &MeasCov) -> Self {
        let h = observation();
        let y = Meas::from_row_slice(&z) - h * self.x;
        let s = h * self.p * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return self.clone();
        };
        let k = self.p * h.transpose() * s_inv;
        let mut x = self.x + k * y;
        x[2] = x[2].max(MIN_SHAPE);
        x[3] = x[3].max(MIN_SHAPE);
        let ikh = StateCov::identity() - k * h;
        let p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
        Self {
            x,
            p: symmetrize(&p),
        }
    }
}

/// Free-function form of [`KalmanState::predict`].
pub fn predict_step(s: &KalmanState, params: &KalmanParams) -> KalmanState {
    s.predict(params)
}

/// Exponential confidence smoothing: `0.7 * new + 0.3 * prev`.
pub fn smooth_confidence(prev: f64, new: f64) -> f64 {
    (0.7 * new + 0.3 * prev).clamp(0.0, 1.0)
}

/// Camera frames elapsed while the quality path was busy.
pub fn injection_lag(elapsed_ms: f64, period_ms: f64) -> u32 {
    if elapsed_ms <= 0.0 || period_ms <= 0.0 {
        return 0;
    }
    // Guard against 159.99999 / 33 style representation error at exact multiples.
    let ratio = elapsed_ms / period_ms;
    let rounded = ratio.round();
    if (ratio - rounded).abs() < 1e-9 {
        rounded as u32
    } else {
        ratio.ceil() as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class_id: u32,
    pub state: KalmanState,
    pub conf_smooth: f64,
    pub hits: u32,
    pub misses: u32,
    pub age: u32,
    /// Bumped on every committed change; used to detect stale edits.
    pub rev: u64,
}

impl Track {
    pub fn bbox(&self) -> BBox {
        self.state.bbox()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub iou_gate: f64,
    pub max_misses: u32,
    pub min_hits: u32,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_gate: 0.3,
            max_misses: 3,
            min_hits: 1,
            kalman: KalmanParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissPolicy {
    Count,
    Ignore,
}

/// A detection that did not match any track.
#[derive(Clone, Debug, PartialEq)]
pub struct Birth {
    pub class_id: u32,
    pub state: KalmanState,
    pub conf: f64,
}

/// The result of associating detections with a snapshot of tracks,
/// computed without holding any lock.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Plan {
    pub updated: Vec<Track>,
    pub removed: Vec<u64>,
    pub births: Vec<Birth>,
}

/// A measurement to associate: box, class, confidence and its noise.
struct Observation {
    bbox: BBox,
    class_id: u32,
    conf: f64,
    z: [f64; 4],
    r: MeasCov,
    seed: KalmanState,
}

/// Hungarian association gated on IoU; returns (track, obs) pairs.
fn associate(tracks: &[Track], obs: &[Observation], gate: f64) -> Vec<(usize, usize)> {
    if tracks.is_empty() || obs.is_empty() {
        return Vec::new();
    }
    let boxes: Vec<BBox> = tracks.iter().map(Track::bbox).collect();
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .zip(&boxes)
        .map(|(t, tb)| {
            obs.iter()
                .map(|o| {
                    if o.class_id == t.class_id {
                        1.0 - iou(tb, &o.bbox)
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    hungarian(&cost)
        .into_iter()
        .filter(|&(i, j)| {
            tracks[i].class_id == obs[j].class_id && iou(&boxes[i], &obs[j].bbox) >= gate
        })
        .collect()
}

fn correct(tracks: &[Track], obs: Vec<Observation>, cfg: &TrackerConfig, misses: MissPolicy) -> Plan {
    let pairs = associate(tracks, &obs, cfg.iou_gate);
    let mut matched_track = vec![None; tracks.len()];
    let mut obs_used = vec![false; obs.len()];
    for &(i, j) in &pairs {
        matched_track[i] = Some(j);
        obs_used[j] = true;
    }
    let mut plan = Plan::default();
    for (t, m) in tracks.iter().zip(matched_track) {
        match m {
            Some(j) => {
                let o = &obs[j];
                plan.updated.push(Track {
                    state: t.state.update(o.z, &o.r),
                    conf_smooth: smooth_confidence(t.conf_smooth, o.conf),
                    hits: t.hits + 1,
                    misses: 0,
                    ..t.clone()
                });
            }
            None if misses == MissPolicy::Count => {
                if t.misses + 1 >= cfg.max_misses {
                    plan.removed.push(t.id);
                } else {
                    plan.updated.push(Track {
                        misses: t.misses + 1,
                        ..t.clone()
                    });
                }
            }
            None => {}
        }
    }
    for (o, used) in obs.into_iter().zip(obs_used) {
        if !used {
            plan.births.push(Birth {
                class_id: o.class_id,
                state: o.seed,
                conf: o.conf.clamp(0.0, 1.0),
            });
        }
    }
    plan
}

fn frame_observations(dets: &[Detection], params: &KalmanParams) -> Vec<Observation> {
    dets.iter()
        .map(|d| Observation {
            bbox: d.bbox,
            class_id: d.class_id,
            conf: d.score,
            z: measurement_of(&d.bbox),
            r: params.r(),
            seed: KalmanState::from_bbox(&d.bbox, params),
        })
        .collect()
}

/// Late detections advanced `k` zero-velocity steps. The lag adds the
/// accumulated process noise of those steps to the measurement noise.
fn injected_observations(dets: &[Detection], k: u32, params: &KalmanParams) -> Vec<Observation> {
    let h = observation();
    dets.iter()
        .map(|d| {
            let start = KalmanState::from_bbox(&d.bbox, params);
            let mut projected = start.clone();
            let mut lag_noise = StateCov::zeros();
            let f = transition();
            for _ in 0..k {
                projected = projected.predict(params);
                lag_noise = f * lag_noise * f.transpose() + params.q();
            }
            let r = params.r() + h * lag_noise * h.transpose();
            let bbox = projected.bbox();
            Observation {
                bbox,
                class_id: d.class_id,
                conf: d.score,
                z: measurement_of(&bbox),
                r,
                seed: projected,
            }
        })
        .collect()
}

/// Frame-rate association: predict every track, then match and update.
pub fn plan_frame(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> Plan {
    let predicted: Vec<Track> = tracks
        .iter()
        .map(|t| Track {
            state: t.state.predict(&cfg.kalman),
            age: t.age + 1,
            ..t.clone()
        })
        .collect();
    correct(&predicted, frame_observations(dets, &cfg.kalman), cfg, MissPolicy::Count)
}

/// Measurement update only; with `MissPolicy::Ignore` nothing is removed.
pub fn plan_correction(
    tracks: &[Track],
    dets: &[Detection],
    cfg: &TrackerConfig,
    misses: MissPolicy,
) -> Plan {
    correct(tracks, frame_observations(dets, &cfg.kalman), cfg, misses)
}

/// Late-detection injection: projects each detection `k` steps and updates
/// matched tracks without predicting them or counting misses.
pub fn plan_injection(tracks: &[Track], dets: &[Detection], k: u32, cfg: &TrackerConfig) -> Plan {
    correct(tracks, injected_observations(dets, k, &cfg.kalman), cfg, MissPolicy::Ignore)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Writer {
    /// Frame-rate updates; always applied.
    Safety,
    /// Injections; dropped per track if the track changed since the snapshot.
    Quality,
}

#[derive(Clone, Debug, Default)]
pub struct Tracker {
    tracks: Vec<Track>,
    next_id: u64,
    cfg: TrackerConfig,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 1,
            cfg,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Tracks old enough to report.
    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.hits >= self.cfg.min_hits)
    }

    /// Commits a plan. Only list splicing and id allocation happen here.
    pub fn apply(&mut self, plan: Plan, writer: Writer) {
        for upd in plan.updated {
            if let Some(t) = self.tracks.iter_mut().find(|t| t.id == upd.id) {
                if writer == Writer::Quality && t.rev != upd.rev {
                    continue;
                }
                let rev = t.rev + 1;
                *t = Track { rev, ..upd };
            }
        }
        if !plan.removed.is_empty() {
            self.tracks.retain(|t| !plan.removed.contains(&t.id));
        }
        for b in plan.births {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                class_id: b.class_id,
                state: b.state,
                conf_smooth: b.conf,
                hits: 1,
                misses: 0,
                age: 0,
                rev: 0,
            });
        }
    }

    pub fn update_frame(&mut self, dets: &[Detection]) {
        let plan = plan_frame(&self.tracks, dets, &self.cfg);
        self.apply(plan, Writer::Safety);
    }

    pub fn inject_async(&mut self, dets: &[Detection], k: u32) {
        let plan = plan_injection(&self.tracks, dets, k, &self.cfg);
        self.apply(plan, Writer::Quality);
    }
}

/// Track set shared between the safety and quality threads. The lock is
/// held only to snapshot or splice; filtering runs outside it.
#[derive(Debug, Default)]
pub struct SharedTracker {
    inner: Mutex<Tracker>,
}

impl SharedTracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            inner: Mutex::new(Tracker::new(cfg)),
        }
    }

    fn snapshot(&self) -> (Vec<Track>, TrackerConfig) {
        let g = self.inner.lock().expect("tracker lock poisoned");
        (g.tracks.clone(), g.cfg.clone())
    }

    fn commit(&self, plan: Plan, writer: Writer) -> Vec<Track> {
        let mut g = self.inner.lock().expect("tracker lock poisoned");
        g.apply(plan, writer);
        g.confirmed().cloned().collect()
    }

    /// Safety-path update; returns the confirmed tracks after the frame.
    pub fn update_frame(&self, dets: &[Detection]) -> Vec<Track> {
        let (tracks, cfg) = self.snapshot();
        let plan = plan_frame(&tracks, dets, &cfg);
        self.commit(plan, Writer::Safety)
    }

    pub fn inject_async(&self, dets: &[Detection], k: u32) {
        let (tracks, cfg) = self.snapshot();
        let plan = plan_injection(&tracks, dets, k, &cfg);
        self.commit(plan, Writer::Quality);
    }

    pub fn tracks(&self) -> Vec<Track> {
        self.snapshot().0
    }

    pub fn confirmed(&self) -> Vec<Track> {
        let g = self.inner.lock().expect("tracker lock poisoned");
        g.confirmed().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Stream;

    fn det(x: f64, y: f64, class_id: u32) -> Detection {
        Detection::new(BBox::new(x, y, x + 20.0, y + 40.0).unwrap(), class_id, 0.8, Stream::Safety)
    }

    #[test]
    fn predict_moves_by_velocity() {
        let p = KalmanParams::default();
        let mut s = KalmanState::from_bbox(&BBox::new(0.0, 0.0, 10.0, 20.0).unwrap(), &p);
        let still = s.predict(&p);
        assert_eq!(still.x.fixed_rows::<4>(0), s.x.fixed_rows::<4>(0));
        s.x[4] = 2.0;
        assert_eq!(s.predict(&p).x[0], s.x[0] + 2.0);
    }

    #[test]
    fn smoothing_values() {
        assert!((smooth_confidence(0.4, 0.4) - 0.4).abs() < 1e-15);
        assert!((smooth_confidence(0.5, 1.0) - 0.85).abs() < 1e-15);
        let mut c = 0.0;
        for n in 1..=6 {
            c = smooth_confidence(c, 1.0);
            assert!((c - (1.0 - 0.3f64.powi(n))).abs() < 1e-12);
        }
    }

    #[test]
    fn lag_frames() {
        assert_eq!(injection_lag(160.0, 33.0), 5);
        assert_eq!(injection_lag(99.0, 33.0), 3);
        assert_eq!(injection_lag(100.0, 33.0), 4);
        assert_eq!(injection_lag(0.0, 33.0), 0);
    }

    #[test]
    fn birth_and_death() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.update_frame(&[det(0.0, 0.0, 0), det(100.0, 0.0, 1)]);
        assert_eq!(t.tracks().len(), 2);
        assert_eq!(t.tracks()[0].bbox(), det(0.0, 0.0, 0).bbox);
        let ids: Vec<u64> = t.tracks().iter().map(|x| x.id).collect();
        assert_eq!(ids, vec![1, 2]);
        t.update_frame(&[]);
        t.update_frame(&[]);
        assert_eq!(t.tracks().len(), 2);
        t.update_frame(&[]);
        assert!(t.tracks().is_empty());
        t.update_frame(&[det(0.0, 0.0, 0)]);
        assert_eq!(t.tracks()[0].id, 3);
    }

    #[test]
    fn class_mismatch_spawns_new_track() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.update_frame(&[det(0.0, 0.0, 0)]);
        t.update_frame(&[det(0.0, 0.0, 1)]);
        assert_eq!(t.tracks().len(), 2);
    }

    #[test]
    fn injection_never_kills() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.update_frame(&[det(0.0, 0.0, 0)]);
        t.update_frame(&[]);
        t.update_frame(&[]);
        for _ in 0..5 {
            t.inject_async(&[], 3);
        }
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(t.tracks()[0].misses, 2);
    }

    #[test]
    fn stationary_injection_keeps_box() {
        let p = TrackerConfig::default();
        let d = det(30.0, 40.0, 0);
        let obs = injected_observations(&[d], 5, &p.kalman);
        let b = obs[0].bbox;
        assert!((b.x1 - d.bbox.x1).abs() < 1e-9 && (b.y2 - d.bbox.y2).abs() < 1e-9);
    }

    #[test]
    fn stale_quality_edit_is_dropped() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.update_frame(&[det(0.0, 0.0, 0)]);
        let snapshot = t.tracks().to_vec();
        t.update_frame(&[det(1.0, 0.0, 0)]);
        let after_safety = t.tracks()[0].clone();
        let plan = plan_injection(&snapshot, &[det(2.0, 0.0, 0)], 1, t.config());
        t.apply(plan, Writer::Quality);
        assert_eq!(t.tracks()[0], after_safety);
    }
}
