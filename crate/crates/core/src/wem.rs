//! Heuristic weather condition and severity estimation.
//!
//! Three threshold rules drive the estimate:
//!
//! | rule | fires when |
//! |------|------------|
//! | fog  | `sigma_L < 35` and `rho_e < 0.1` |
//! | rain | `r_v > 3.0` and `mu_S < 60` |
//! | haze | `mu_S < 40` and `sigma_L < 45` (routed to the sand/CLAHE branch) |
//!
//! Each rule is scored by its weakest conjunct's relative margin so that the
//! gap between the best two rules can serve as a confidence spread.

use crate::imaging::LabStats;
use crate::sed::SlotRecord;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Rain,
    Fog,
    Sand,
    Snow,
    Clear,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Rain,
        Condition::Fog,
        Condition::Sand,
        Condition::Snow,
        Condition::Clear,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Rain => "rain",
            Condition::Fog => "fog",
            Condition::Sand => "sand",
            Condition::Snow => "snow",
            Condition::Clear => "clear",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Condition::Rain => 0,
            Condition::Fog => 1,
            Condition::Sand => 2,
            Condition::Snow => 3,
            Condition::Clear => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown weather condition {0:?}")]
pub struct UnknownCondition(pub String);

impl FromStr for Condition {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rain" | "rainy" => Ok(Condition::Rain),
            "fog" | "foggy" => Ok(Condition::Fog),
            "sand" | "sandy" | "dust" | "haze" => Ok(Condition::Sand),
            "snow" | "snowy" => Ok(Condition::Snow),
            "clear" | "none" => Ok(Condition::Clear),
            other => Err(UnknownCondition(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    Heuristic,
    Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherEstimate {
    pub condition: Condition,
    /// Severity in [0,1].
    pub severity: f64,
    /// Gap between the two best rule scores.
    pub spread: f64,
    pub source: EstimateSource,
}

impl WeatherEstimate {
    /// An estimate with an externally known condition (ground-truth routing).
    pub fn fixed(condition: Condition, severity: f64) -> Self {
        Self {
            condition,
            severity: severity.clamp(0.0, 1.0),
            spread: 1.0,
            source: EstimateSource::Heuristic,
        }
    }
}

/// Below this spread the zero-shot label from the slot takes over.
pub const SPREAD_THRESHOLD: f64 = 0.15;

pub const FOG_SIGMA_L: f64 = 35.0;
pub const FOG_RHO_E: f64 = 0.1;
pub const RAIN_R_V: f64 = 3.0;
pub const RAIN_MU_S: f64 = 60.0;
pub const HAZE_MU_S: f64 = 40.0;
pub const HAZE_SIGMA_L: f64 = 45.0;

fn below(value: f64, threshold: f64) -> f64 {
    (threshold - value) / threshold
}

fn above(value: f64, threshold: f64) -> f64 {
    (value - threshold) / threshold
}

fn rule_score(margins: &[f64]) -> f64 {
    if margins.iter().any(|m| m.is_nan()) {
        return 0.0;
    }
    margins
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0)
}

/// Per-condition rule scores in [0,1]: (fog, rain, sand).
pub fn rule_scores(stats: &LabStats) -> [(Condition, f64); 3] {
    [
        (
            Condition::Fog,
            rule_score(&[below(stats.sigma_l, FOG_SIGMA_L), below(stats.rho_e, FOG_RHO_E)]),
        ),
        (
            Condition::Rain,
            rule_score(&[above(stats.r_v, RAIN_R_V), below(stats.mu_s, RAIN_MU_S)]),
        ),
        (
            Condition::Sand,
            rule_score(&[below(stats.mu_s, HAZE_MU_S), below(stats.sigma_l, HAZE_SIGMA_L)]),
        ),
    ]
}

/// Severity for a condition, driven by that condition's leading feature.
pub fn severity_for(condition: Condition, stats: &LabStats) -> f64 {
    let s = match condition {
        Condition::Fog => 1.0 - stats.sigma_l / FOG_SIGMA_L,
        Condition::Rain => (stats.r_v - RAIN_R_V) / RAIN_R_V,
        Condition::Sand => 1.0 - stats.mu_s / HAZE_MU_S,
        Condition::Snow | Condition::Clear => 0.0,
    };
    if s.is_nan() {
        0.0
    } else {
        s.clamp(0.0, 1.0)
    }
}

/// Rule-based estimate. When no rule fires the frame is `clear` with zero
/// severity and zero spread, which leaves it open to slot disambiguation.
pub fn classify(stats: &LabStats) -> WeatherEstimate {
    let mut scores = rule_scores(stats);
    // Stable: equal scores keep fog > rain > sand precedence.
    scores.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (top, top_score) = scores[0];
    if top_score <= 0.0 {
        return WeatherEstimate {
            condition: Condition::Clear,
            severity: 0.0,
            spread: 0.0,
            source: EstimateSource::Heuristic,
        };
    }
    WeatherEstimate {
        condition: top,
        severity: severity_for(top, stats),
        spread: top_score - scores[1].1,
        source: EstimateSource::Heuristic,
    }
}

/// Swaps in the zero-shot label when the heuristic is ambiguous and a slot
/// record is available. Severity is never changed.
pub fn resolve(est: WeatherEstimate, slot: Option<&SlotRecord>) -> WeatherEstimate {
    resolve_with(est, slot, SPREAD_THRESHOLD)
}

/// [`resolve`] with an explicit ambiguity threshold on the top-2 spread.
pub fn resolve_with(est: WeatherEstimate, slot: Option<&SlotRecord>, spread_threshold: f64) -> WeatherEstimate {
    match slot {
        Some(rec) if est.spread < spread_threshold => WeatherEstimate {
            condition: rec.clip_label,
            source: EstimateSource::Slot,
            ..est
        },
        _ => est,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mu_l: f64, sigma_l: f64, mu_s: f64, rho_e: f64, r_v: f64) -> LabStats {
        LabStats {
            mu_l,
            sigma_l,
            mu_s,
            rho_e,
            r_v,
        }
    }

    #[test]
    fn fog_example() {
        let e = classify(&stats(120.0, 30.0, 100.0, 0.05, 1.0));
        assert_eq!(e.condition, Condition::Fog);
        assert!((e.severity - (1.0 - 30.0 / 35.0)).abs() < 1e-12);
        assert!((e.severity - 0.143).abs() < 5e-4);
    }

    #[test]
    fn clear_example() {
        let e = classify(&stats(120.0, 200.0, 120.0, 0.4, 1.0));
        assert_eq!(e.condition, Condition::Clear);
        assert_eq!(e.severity, 0.0);
    }

    #[test]
    fn rain_example() {
        let e = classify(&stats(120.0, 60.0, 50.0, 0.3, 3.5));
        assert_eq!(e.condition, Condition::Rain);
        assert!((e.severity - 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn haze_routes_to_sand() {
        let e = classify(&stats(120.0, 40.0, 10.0, 0.3, 1.0));
        assert_eq!(e.condition, Condition::Sand);
        assert!((e.severity - 0.75).abs() < 1e-12);
    }

    #[test]
    fn condition_parsing() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
            assert_eq!(Condition::from_code(c.code()), Some(c));
        }
        assert!("hail".parse::<Condition>().is_err());
    }
}
