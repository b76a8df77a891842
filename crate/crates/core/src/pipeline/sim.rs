//! Discrete-event runner: every stage really executes, but time advances by
//! the configured stage costs so runs are reproducible bit for bit.

use super::{
    analytics_stage, quality_stage, raw_lines, safety_detect, track_lines, AnalyticsInput,
    Injection, LatencyReport, LatencyStats, Models, PipelineConfig, RunOutput, TrackLogLine,
};
use crate::frame::Frame;
use crate::geometry::Detection;
use crate::ktt::{injection_lag, Tracker};
use crate::sed::{SedDb, SlotRecord};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

#[derive(Debug)]
enum Kind {
    /// Blocking-mode worker finished a frame.
    BlockDone,
    SafetyDone,
    QualityDone,
    AnalyticsDone,
    Arrive(usize),
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::BlockDone | Kind::SafetyDone => 0,
            Kind::QualityDone => 1,
            Kind::AnalyticsDone => 2,
            Kind::Arrive(_) => 3,
        }
    }
}

struct Event {
    t: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest event.
        other
            .t
            .total_cmp(&self.t)
            .then(other.kind.rank().cmp(&self.kind.rank()))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Sim<'a> {
    frames: &'a [Frame],
    models: &'a Models,
    cfg: &'a PipelineConfig,
    queue: BinaryHeap<Event>,
    seq: u64,
    tracker: Tracker,
    log: Vec<TrackLogLine>,
    errors: Vec<String>,
    db: SedDb,

    safety_busy: Option<(usize, Option<Vec<Detection>>)>,
    safety_backlog: VecDeque<usize>,
    safety_outputs: Vec<f64>,
    end_to_end: Vec<f64>,

    newest: Option<usize>,
    quality_last: Option<usize>,
    quality_busy: Option<(usize, Option<(Vec<Detection>, AnalyticsInput)>, f64)>,
    quality_cycles: Vec<f64>,

    analytics_mailbox: Option<AnalyticsInput>,
    analytics_busy: Option<SlotRecord>,
    analytics_cycles: Vec<f64>,
    slot: Option<SlotRecord>,
    slot_version: u64,
    slot_versions: Vec<u64>,
    injections: Vec<Injection>,
}

impl<'a> Sim<'a> {
    fn push(&mut self, t: f64, kind: Kind) {
        self.seq += 1;
        self.queue.push(Event {
            t,
            seq: self.seq,
            kind,
        });
    }

    fn quality_cost(&self) -> f64 {
        let c = &self.cfg.costs;
        let mut cost = c.quality_ms + self.cfg.quality_delay_ms;
        if self.cfg.ablation.thread_e_disabled {
            cost += c.analytics_ms;
        }
        cost
    }

    fn start_safety(&mut self, t: f64, i: usize) {
        let dets = match safety_detect(&self.frames[i], self.models, self.cfg) {
            Ok(d) => Some(d),
            Err(e) => {
                self.errors.push(format!("safety frame {}: {e}", self.frames[i].index));
                None
            }
        };
        self.safety_busy = Some((i, dets));
        self.push(t + self.cfg.costs.safety_ms, Kind::SafetyDone);
    }

    fn finish_safety(&mut self, t: f64) {
        let Some((i, dets)) = self.safety_busy.take() else {
            return;
        };
        if let Some(dets) = dets {
            self.tracker.update_frame(&dets);
            self.emit(t, i, &dets);
        }
        if let Some(next) = self.safety_backlog.pop_front() {
            self.start_safety(t, next);
        }
    }

    fn emit(&mut self, t: f64, i: usize, dets: &[Detection]) {
        let frame = &self.frames[i];
        if self.cfg.ablation.ktt_raw_detections {
            self.log.extend(raw_lines(frame.index, dets));
        } else {
            let tracks: Vec<_> = self.tracker.confirmed().cloned().collect();
            self.log.extend(track_lines(frame.index, &tracks));
        }
        self.safety_outputs.push(t);
        self.end_to_end.push(t - frame.capture_ms);
    }

    fn run_quality(&mut self, i: usize) -> Option<(Vec<Detection>, AnalyticsInput)> {
        let frame = &self.frames[i];
        if let Some(rec) = &self.slot {
            self.slot_versions.push(rec.version);
        }
        match quality_stage(frame, self.slot.as_ref(), self.models, self.cfg) {
            Ok(out) => Some((out.fused, out.analytics)),
            Err(e) => {
                self.errors.push(format!("quality frame {}: {e}", frame.index));
                None
            }
        }
    }

    fn start_quality(&mut self, t: f64) {
        let Some(i) = self.newest else { return };
        if self.quality_last.is_some_and(|last| last >= i) {
            return;
        }
        self.quality_last = Some(i);
        let out = self.run_quality(i);
        self.quality_busy = Some((i, out, t));
        let cost = self.quality_cost();
        self.push(t + cost, Kind::QualityDone);
    }

    fn finish_quality(&mut self, t: f64) {
        let Some((i, out, started)) = self.quality_busy.take() else {
            return;
        };
        self.quality_cycles.push(t - started);
        if let Some((fused, analytics)) = out {
            let frame = &self.frames[i];
            let k = injection_lag(t - frame.capture_ms, self.cfg.period_ms);
            self.tracker.inject_async(&fused, k);
            self.injections.push(Injection {
                frame: frame.index,
                at_ms: t,
                k,
            });
            self.hand_to_analytics(t, analytics);
        }
        self.start_quality(t);
    }

    fn hand_to_analytics(&mut self, t: f64, input: AnalyticsInput) {
        if self.cfg.ablation.thread_e_disabled {
            self.slot_version += 1;
            match analytics_stage(&input, self.models, &mut self.db, &self.cfg.prompts, self.slot_version) {
                Ok(rec) => self.slot = Some(rec),
                Err(e) => self.errors.push(format!("analytics: {e}")),
            }
            return;
        }
        self.analytics_mailbox = Some(input);
        if self.analytics_busy.is_none() {
            self.start_analytics(t);
        }
    }

    fn start_analytics(&mut self, t: f64) {
        let Some(input) = self.analytics_mailbox.take() else {
            return;
        };
        self.slot_version += 1;
        match analytics_stage(&input, self.models, &mut self.db, &self.cfg.prompts, self.slot_version) {
            Ok(rec) => {
                self.analytics_busy = Some(rec);
                self.push(t + self.cfg.costs.analytics_ms, Kind::AnalyticsDone);
                self.analytics_cycles.push(self.cfg.costs.analytics_ms);
            }
            Err(e) => self.errors.push(format!("analytics: {e}")),
        }
    }

    fn finish_analytics(&mut self, t: f64) {
        if let Some(rec) = self.analytics_busy.take() {
            self.slot = Some(rec);
        }
        self.start_analytics(t);
    }

    fn start_block(&mut self, t: f64) {
        let Some(i) = self.newest else { return };
        if self.quality_last.is_some_and(|last| last >= i) {
            return;
        }
        self.quality_last = Some(i);
        let ds = match safety_detect(&self.frames[i], self.models, self.cfg) {
            Ok(d) => Some(d),
            Err(e) => {
                self.errors.push(format!("safety frame {}: {e}", self.frames[i].index));
                None
            }
        };
        self.safety_busy = Some((i, ds));
        let out = self.run_quality(i);
        self.quality_busy = Some((i, out, t));
        let cost = self.cfg.costs.safety_ms + self.quality_cost();
        self.push(t + cost, Kind::BlockDone);
    }

    fn finish_block(&mut self, t: f64) {
        if let Some((i, Some(dets))) = self.safety_busy.take() {
            self.tracker.update_frame(&dets);
            if let Some((_, Some((fused, analytics)), started)) = self.quality_busy.take() {
                self.quality_cycles.push(t - started);
                self.tracker.inject_async(&fused, 0);
                self.injections.push(Injection {
                    frame: self.frames[i].index,
                    at_ms: t,
                    k: 0,
                });
                self.hand_to_analytics(t, analytics);
            }
            self.emit(t, i, &dets);
        }
        self.quality_busy = None;
        self.start_block(t);
    }

    fn arrive(&mut self, t: f64, i: usize) {
        self.newest = Some(i);
        if self.cfg.ablation.blocking_single_thread {
            if self.quality_busy.is_none() && self.safety_busy.is_none() {
                self.start_block(t);
            }
            return;
        }
        if self.safety_busy.is_none() {
            self.start_safety(t, i);
        } else {
            self.safety_backlog.push_back(i);
        }
        if self.quality_busy.is_none() {
            self.start_quality(t);
        }
    }
}

/// Runs the pipeline over `frames` using each frame's `capture_ms` as its
/// arrival time and the configured stage costs as durations.
pub fn run_simulated(frames: &[Frame], models: &Models, cfg: &PipelineConfig, db: SedDb) -> RunOutput {
    let mut sim = Sim {
        frames,
        models,
        cfg,
        queue: BinaryHeap::new(),
        seq: 0,
        tracker: Tracker::new(cfg.tracker.clone()),
        log: Vec::new(),
        errors: Vec::new(),
        db,
        safety_busy: None,
        safety_backlog: VecDeque::new(),
        safety_outputs: Vec::new(),
        end_to_end: Vec::new(),
        newest: None,
        quality_last: None,
        quality_busy: None,
        quality_cycles: Vec::new(),
        analytics_mailbox: None,
        analytics_busy: None,
        analytics_cycles: Vec::new(),
        slot: None,
        slot_version: 0,
        slot_versions: Vec::new(),
        injections: Vec::new(),
    };
    for (i, f) in frames.iter().enumerate() {
        sim.push(f.capture_ms, Kind::Arrive(i));
    }
    while let Some(ev) = sim.queue.pop() {
        match ev.kind {
            Kind::Arrive(i) => sim.arrive(ev.t, i),
            Kind::SafetyDone => sim.finish_safety(ev.t),
            Kind::QualityDone => sim.finish_quality(ev.t),
            Kind::AnalyticsDone => sim.finish_analytics(ev.t),
            Kind::BlockDone => sim.finish_block(ev.t),
        }
    }

    let periods: Vec<f64> = sim.safety_outputs.windows(2).map(|w| w[1] - w[0]).collect();
    let safety_samples = vec![cfg.costs.safety_ms; sim.safety_outputs.len()];
    let latency = LatencyReport {
        stages: vec![
            LatencyStats::from_samples("safety", &safety_samples, 0),
            LatencyStats::from_samples("quality_cycle", &sim.quality_cycles, 0),
            LatencyStats::from_samples("analytics", &sim.analytics_cycles, 0),
            LatencyStats::from_samples("safety_period", &periods, 0),
            LatencyStats::from_samples("capture_to_output", &sim.end_to_end, 0),
        ],
    };
    RunOutput {
        log: sim.log,
        latency,
        safety_periods_ms: periods,
        injections: sim.injections,
        slot_versions: sim.slot_versions,
        errors: sim.errors,
        db: sim.db,
    }
}
