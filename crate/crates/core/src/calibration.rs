//! Baseline averaging and the two adaptive stage thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::AttentionSample;

/// Width of the medium band restored when the clamped thresholds invert.
pub const REPAIR_BAND: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration incomplete: {got} samples, need at least {needed}")]
    Incomplete { got: usize, needed: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid calibration config: {0}")]
    Config(String),
    #[error("baseline {0} outside [0, 100]")]
    BaselineOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub calibration_duration_s: f64,
    pub min_samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 1.3,
            lower_bound: 10.0,
            upper_bound: 85.0,
            calibration_duration_s: 60.0,
            min_samples: 30,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let all_finite = [
            self.alpha,
            self.beta,
            self.lower_bound,
            self.upper_bound,
            self.calibration_duration_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(CalibrationError::Config("parameters must be finite".into()));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0 && 1.0 < self.beta) {
            return Err(CalibrationError::Config("need 0 < alpha < 1 < beta".into()));
        }
        if !(0.0 <= self.lower_bound && self.lower_bound < self.upper_bound && self.upper_bound <= 100.0) {
            return Err(CalibrationError::Config("need 0 <= LB < UB <= 100".into()));
        }
        if self.calibration_duration_s <= 0.0 || self.min_samples == 0 {
            return Err(CalibrationError::Config(
                "duration and min_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Adaptive,
    Manual,
}

/// Stage boundaries: Low below `t1`, High at or above `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Calibration baseline; absent for facilitator-set thresholds.
    pub baseline: Option<f64>,
    pub t1: f64,
    pub t2: f64,
    pub source: ThresholdSource,
}

pub fn compute_baseline(
    samples: &[AttentionSample],
    cfg: &CalibrationConfig,
) -> Result<f64, CalibrationError> {
    if samples.len() < cfg.min_samples {
        return Err(CalibrationError::Incomplete {
            got: samples.len(),
            needed: cfg.min_samples,
        });
    }
    let b = samples.iter().map(|s| s.index).sum::<f64>() / samples.len() as f64;
    if !(0.0..=100.0).contains(&b) {
        return Err(CalibrationError::BaselineOutOfRange(b));
    }
    Ok(b)
}

/// `t1 = max(LB, alpha*b)`, `t2 = min(UB, beta*b)`, with the medium band
/// restored to `REPAIR_BAND` points when the clamps invert it.
pub fn compute_thresholds(b: f64, cfg: &CalibrationConfig) -> Result<Thresholds, CalibrationError> {
    if !(0.0..=100.0).contains(&b) {
        return Err(CalibrationError::BaselineOutOfRange(b));
    }
    let t1 = cfg.lower_bound.max(b * cfg.alpha);
    let mut t2 = cfg.upper_bound.min(b * cfg.beta);
    if t2 <= t1 {
        t2 = cfg.upper_bound.min(t1 + REPAIR_BAND);
    }
    Ok(Thresholds {
        baseline: Some(b),
        t1,
        t2,
        source: ThresholdSource::Adaptive,
    })
}

pub fn set_manual_thresholds(t1: f64, t2: f64) -> Result<Thresholds, CalibrationError> {
    if !(t1.is_finite() && t2.is_finite()) {
        return Err(CalibrationError::InvalidThresholds(
            "values must be finite".into(),
        ));
    }
    if !(0.0 <= t1 && t1 < t2 && t2 <= 100.0) {
        return Err(CalibrationError::InvalidThresholds(format!(
            "need 0 <= t1 < t2 <= 100, got [{t1}, {t2}]"
        )));
    }
    Ok(Thresholds {
        baseline: None,
        t1,
        t2,
        source: ThresholdSource::Manual,
    })
}
