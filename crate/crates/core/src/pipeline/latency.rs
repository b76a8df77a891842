use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

/// Warmup and timed call counts for accelerator timings.
pub const GPU_DISCIPLINE: (usize, usize) = (10, 50);
/// Warmup and timed call counts for CPU timings.
pub const CPU_DISCIPLINE: (usize, usize) = (5, 100);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub name: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub warmup: usize,
    pub timed: usize,
}

impl LatencyStats {
    /// Mean and sample standard deviation of `samples`.
    pub fn from_samples(name: &str, samples: &[f64], warmup: usize) -> Self {
        let n = samples.len();
        let mean = if n == 0 {
            0.0
        } else {
            samples.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            name: name.into(),
            mean_ms: mean,
            std_ms: std,
            warmup,
            timed: n,
        }
    }
}

/// Runs `op` `warmup` times untimed, then `timed` times on a monotonic clock.
pub fn measure_latency(name: &str, warmup: usize, timed: usize, mut op: impl FnMut()) -> LatencyStats {
    for _ in 0..warmup {
        op();
    }
    let samples: Vec<f64> = (0..timed.max(1))
        .map(|_| {
            let t = Instant::now();
            op();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    LatencyStats::from_samples(name, &samples, warmup)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stages: Vec<LatencyStats>,
}

impl LatencyReport {
    pub fn get(&self, name: &str) -> Option<&LatencyStats> {
        self.stages.iter().find(|s| s.name == name)
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>18} {:>8} {:>8}", "stage", "latency (ms)", "warmup", "timed")?;
        for s in &self.stages {
            let cell = format!("{:.2} ± {:.2}", s.mean_ms, s.std_ms);
            writeln!(f, "{:<22} {:>18} {:>8} {:>8}", s.name, cell, s.warmup, s.timed)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn sample_statistics() {
        let s = LatencyStats::from_samples("x", &[1.0, 2.0, 3.0], 0);
        assert_eq!(s.mean_ms, 2.0);
        assert!((s.std_ms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_calls_are_not_timed() {
        let mut calls = 0;
        let s = measure_latency("count", 3, 4, || calls += 1);
        assert_eq!(calls, 7);
        assert_eq!((s.warmup, s.timed), (3, 4));
    }

    #[test]
    fn sleep_stub_is_measured() {
        let s = measure_latency("sleep", 1, 5, || std::thread::sleep(Duration::from_millis(10)));
        assert!(s.mean_ms >= 10.0 && s.mean_ms < 40.0, "{}", s.mean_ms);
    }
}
