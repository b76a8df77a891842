//! Real-clock runner: the caller paces the source, three workers run
//! concurrently and communicate only through a channel into the safety
//! worker, two latest-value mailboxes and the slot.

use super::{
    analytics_stage, quality_stage, raw_lines, safety_detect, track_lines, AnalyticsInput,
    Injection, LatencyReport, LatencyStats, Models, PipelineConfig, RunOutput, TrackLogLine,
};
use crate::frame::Frame;
use crate::ktt::{injection_lag, SharedTracker};
use crate::sed::{SedDb, SlotRecord};
use crate::slot::{slot, SlotReader, SlotWriter};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_micros(500);

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Default)]
struct SafetyResult {
    log: Vec<TrackLogLine>,
    outputs: Vec<f64>,
    busy: Vec<f64>,
    end_to_end: Vec<f64>,
    errors: Vec<String>,
}

#[derive(Default)]
struct QualityResult {
    cycles: Vec<f64>,
    injections: Vec<Injection>,
    versions: Vec<u64>,
    errors: Vec<String>,
    inline_db: Option<SedDb>,
    // Blocking mode folds the safety path into this worker.
    safety: SafetyResult,
}

struct QualityWorker {
    models: Models,
    cfg: PipelineConfig,
    tracker: Arc<SharedTracker>,
    start: Instant,
    frames: SlotReader<Frame>,
    slot: SlotReader<SlotRecord>,
    to_analytics: SlotWriter<AnalyticsInput>,
    source_done: Arc<AtomicBool>,
    inline_db: Option<SedDb>,
}

impl QualityWorker {
    fn run(mut self) -> QualityResult {
        let mut res = QualityResult::default();
        let mut local_slot: Option<SlotRecord> = None;
        let mut version = 0;
        loop {
            // Read the done flag before polling so a final frame is never missed.
            let done = self.source_done.load(Ordering::Acquire);
            let Some(frame) = self.frames.take_new().cloned() else {
                if done {
                    break;
                }
                thread::sleep(POLL);
                continue;
            };
            let cycle_start = Instant::now();
            let blocking = self.cfg.ablation.blocking_single_thread;
            let safety_dets = if blocking {
                let t = Instant::now();
                let d = safety_detect(&frame, &self.models, &self.cfg);
                res.safety.busy.push(t.elapsed().as_secs_f64() * 1e3);
                match d {
                    Ok(d) => Some(d),
                    Err(e) => {
                        res.safety.errors.push(format!("safety frame {}: {e}", frame.index));
                        None
                    }
                }
            } else {
                None
            };

            let slot_rec = if self.cfg.ablation.thread_e_disabled {
                local_slot.clone()
            } else {
                self.slot.latest().cloned()
            };
            if let Some(r) = &slot_rec {
                res.versions.push(r.version);
            }
            let out = quality_stage(&frame, slot_rec.as_ref(), &self.models, &self.cfg);
            if self.cfg.quality_delay_ms > 0.0 {
                thread::sleep(Duration::from_secs_f64(self.cfg.quality_delay_ms / 1e3));
            }
            match out {
                Ok(out) => {
                    if let Some(dets) = &safety_dets {
                        self.tracker.update_frame(dets);
                    }
                    let now = ms_since(self.start);
                    let k = if blocking {
                        0
                    } else {
                        injection_lag(now - frame.capture_ms, self.cfg.period_ms)
                    };
                    self.tracker.inject_async(&out.fused, k);
                    res.injections.push(Injection {
                        frame: frame.index,
                        at_ms: now,
                        k,
                    });
                    if let Some(db) = self.inline_db.as_mut() {
                        version += 1;
                        match analytics_stage(&out.analytics, &self.models, db, &self.cfg.prompts, version) {
                            Ok(rec) => local_slot = Some(rec),
                            Err(e) => res.errors.push(format!("analytics: {e}")),
                        }
                    } else {
                        self.to_analytics.publish(out.analytics);
                    }
                }
                Err(e) => res.errors.push(format!("quality frame {}: {e}", frame.index)),
            }
            if let Some(dets) = safety_dets {
                let t = ms_since(self.start);
                if self.cfg.ablation.ktt_raw_detections {
                    res.safety.log.extend(raw_lines(frame.index, &dets));
                } else {
                    res.safety
                        .log
                        .extend(track_lines(frame.index, &self.tracker.confirmed()));
                }
                res.safety.outputs.push(t);
                res.safety.end_to_end.push(t - frame.capture_ms);
            }
            res.cycles.push(cycle_start.elapsed().as_secs_f64() * 1e3);
        }
        res.inline_db = self.inline_db;
        res
    }
}

/// Runs the pipeline in real time, pacing `frames` at `cfg.period_ms`.
/// Each frame's `capture_ms` is overwritten with its actual send time.
pub fn run_threaded(
    frames: impl IntoIterator<Item = Frame>,
    models: &Models,
    cfg: &PipelineConfig,
    db: SedDb,
) -> RunOutput {
    let start = Instant::now();
    let tracker = Arc::new(SharedTracker::new(cfg.tracker.clone()));
    let source_done = Arc::new(AtomicBool::new(false));
    let (frame_tx, frame_rx) = slot::<Frame>();
    let (analytics_tx, mut analytics_rx) = slot::<AnalyticsInput>();
    let (mut record_tx, record_rx) = slot::<SlotRecord>();
    let blocking = cfg.ablation.blocking_single_thread;
    let inline = cfg.ablation.thread_e_disabled;
    let (mut inline_db, mut e_db) = if inline { (Some(db), None) } else { (None, Some(db)) };

    let (safety_tx, safety_rx) = mpsc::channel::<Frame>();
    let safety = (!blocking).then(|| {
        let models = models.clone();
        let cfg = cfg.clone();
        let tracker = Arc::clone(&tracker);
        thread::spawn(move || {
            let mut res = SafetyResult::default();
            for frame in safety_rx {
                let t = Instant::now();
                match safety_detect(&frame, &models, &cfg) {
                    Ok(dets) => {
                        let tracks = tracker.update_frame(&dets);
                        let done = ms_since(start);
                        if cfg.ablation.ktt_raw_detections {
                            res.log.extend(raw_lines(frame.index, &dets));
                        } else {
                            res.log.extend(track_lines(frame.index, &tracks));
                        }
                        res.outputs.push(done);
                        res.end_to_end.push(done - frame.capture_ms);
                    }
                    Err(e) => res.errors.push(format!("safety frame {}: {e}", frame.index)),
                }
                res.busy.push(t.elapsed().as_secs_f64() * 1e3);
            }
            res
        })
    });

    let quality = {
        let worker = QualityWorker {
            models: models.clone(),
            cfg: cfg.clone(),
            tracker: Arc::clone(&tracker),
            start,
            frames: frame_rx,
            slot: record_rx,
            to_analytics: analytics_tx,
            source_done: Arc::clone(&source_done),
            inline_db: inline_db.take(),
        };
        thread::spawn(move || worker.run())
    };

    let quality_done = Arc::new(AtomicBool::new(false));
    let analytics = (!inline).then(|| {
        let models = models.clone();
        let prompts = cfg.prompts.clone();
        let quality_done = Arc::clone(&quality_done);
        let mut db = e_db.take().expect("analytics owns the database");
        thread::spawn(move || {
            let mut cycles = Vec::new();
            let mut errors = Vec::new();
            let mut version = 0u64;
            loop {
                let done = quality_done.load(Ordering::Acquire);
                let Some(input) = analytics_rx.take_new().cloned() else {
                    if done {
                        break;
                    }
                    thread::sleep(POLL);
                    continue;
                };
                let t = Instant::now();
                version += 1;
                match analytics_stage(&input, &models, &mut db, &prompts, version) {
                    Ok(rec) => record_tx.publish(rec),
                    Err(e) => errors.push(format!("analytics: {e}")),
                }
                cycles.push(t.elapsed().as_secs_f64() * 1e3);
            }
            (cycles, errors, db)
        })
    });

    let mut frame_tx = frame_tx;
    for (i, mut frame) in frames.into_iter().enumerate() {
        let due = Duration::from_secs_f64(i as f64 * cfg.period_ms / 1e3);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            thread::sleep(wait);
        }
        frame.capture_ms = ms_since(start);
        if !blocking {
            let _ = safety_tx.send(frame.clone());
        }
        frame_tx.publish(frame);
    }
    drop(safety_tx);
    source_done.store(true, Ordering::Release);

    let safety_res = safety.map(|h| h.join().expect("safety worker panicked"));
    let mut q = quality.join().expect("quality worker panicked");
    quality_done.store(true, Ordering::Release);
    let (analytics_cycles, analytics_errors, db) = match analytics {
        Some(h) => h.join().expect("analytics worker panicked"),
        None => (Vec::new(), Vec::new(), q.inline_db.take().expect("inline database")),
    };

    let s = safety_res.unwrap_or_else(|| std::mem::take(&mut q.safety));
    let periods: Vec<f64> = s.outputs.windows(2).map(|w| w[1] - w[0]).collect();
    let latency = LatencyReport {
        stages: vec![
            LatencyStats::from_samples("safety", &s.busy, 0),
            LatencyStats::from_samples("quality_cycle", &q.cycles, 0),
            LatencyStats::from_samples("analytics", &analytics_cycles, 0),
            LatencyStats::from_samples("safety_period", &periods, 0),
            LatencyStats::from_samples("capture_to_output", &s.end_to_end, 0),
        ],
    };
    let mut errors = s.errors;
    errors.extend(q.errors);
    errors.extend(analytics_errors);
    RunOutput {
        log: s.log,
        latency,
        safety_periods_ms: periods,
        injections: q.injections,
        slot_versions: q.versions,
        errors,
        db,
    }
}
