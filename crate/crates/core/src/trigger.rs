//! Event-triggered communication condition and adaptive thresholds.
//!
//! A block is broadcast when the Euclidean distance between its current value
//! and the last broadcast copy reaches the block's threshold. After each
//! broadcast, the threshold becomes the mean of the most recent
//! inter-event slopes times the horizon `h`, optionally capped by a schedule
//! `sqrt(g(k))`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("block length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trigger at iteration {k} is not after the last event at {last}")]
    NotAfterLastEvent { k: usize, last: usize },
    #[error("invalid trigger parameter: {0}")]
    InvalidParameter(String),
}

/// Bound `g(k)` on squared thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdSchedule {
    /// Thresholds are not bounded; `g(k) = +inf`.
    #[default]
    None,
    /// `delta <= c`, i.e. `g(k) = c^2`.
    ConstantCap { c: f64 },
    /// `delta <= sqrt(alpha * beta^k)`.
    GeometricCap { alpha: f64, beta: f64 },
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<(), TriggerError> {
        match *self {
            ThresholdSchedule::None => Ok(()),
            ThresholdSchedule::ConstantCap { c } if c >= 0.0 => Ok(()),
            ThresholdSchedule::ConstantCap { c } => Err(TriggerError::InvalidParameter(format!(
                "constant cap c = {c} must be >= 0"
            ))),
            ThresholdSchedule::GeometricCap { alpha, beta } => {
                if !(alpha > 0.0) || !(beta > 0.0 && beta <= 1.0) {
                    Err(TriggerError::InvalidParameter(format!(
                        "geometric cap needs alpha > 0 and 0 < beta <= 1 (got alpha = {alpha}, beta = {beta})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// `g(k)`.
    pub fn g(&self, k: usize) -> f64 {
        match *self {
            ThresholdSchedule::None => f64::INFINITY,
            ThresholdSchedule::ConstantCap { c } => c * c,
            ThresholdSchedule::GeometricCap { alpha, beta } => alpha * beta.powi(k as i32),
        }
    }

    /// Upper bound on the threshold at iteration `k`, `sqrt(g(k))`.
    pub fn cap(&self, k: usize) -> f64 {
        match *self {
            ThresholdSchedule::ConstantCap { c } => c,
            _ => self.g(k).sqrt(),
        }
    }
}

/// `G(K) = sum_{k=0}^{K} g(k)` by direct summation.
pub fn schedule_sum_g(schedule: &ThresholdSchedule, big_k: usize) -> f64 {
    let sum = (0..=big_k).map(|k| schedule.g(k)).sum();
    debug_assert!(closed_form_agrees(
        sum,
        schedule_sum_g_closed_form(schedule, big_k)
    ));
    sum
}

/// `G_{1/2}(K) = sum_{k=0}^{K} sqrt(g(k))` by direct summation.
pub fn schedule_sum_ghalf(schedule: &ThresholdSchedule, big_k: usize) -> f64 {
    let sum = (0..=big_k).map(|k| schedule.g(k).sqrt()).sum();
    debug_assert!(closed_form_agrees(
        sum,
        schedule_sum_ghalf_closed_form(schedule, big_k)
    ));
    sum
}

fn closed_form_agrees(direct: f64, closed: Option<f64>) -> bool {
    match closed {
        Some(c) if direct.is_finite() => (direct - c).abs() <= 1e-12 * direct.abs().max(1.0),
        _ => true,
    }
}

/// Closed form of `G(K)`; `None` for the unbounded schedule.
pub fn schedule_sum_g_closed_form(schedule: &ThresholdSchedule, big_k: usize) -> Option<f64> {
    let terms = big_k as f64 + 1.0;
    match *schedule {
        ThresholdSchedule::None => None,
        ThresholdSchedule::ConstantCap { c } => Some(c * c * terms),
        ThresholdSchedule::GeometricCap { alpha, beta } => {
            Some(geometric_series(alpha, beta, big_k))
        }
    }
}

/// Closed form of `G_{1/2}(K)`; ratio `sqrt(beta)` for the geometric cap.
pub fn schedule_sum_ghalf_closed_form(schedule: &ThresholdSchedule, big_k: usize) -> Option<f64> {
    let terms = big_k as f64 + 1.0;
    match *schedule {
        ThresholdSchedule::None => None,
        ThresholdSchedule::ConstantCap { c } => Some(c * terms),
        ThresholdSchedule::GeometricCap { alpha, beta } => {
            Some(geometric_series(alpha.sqrt(), beta.sqrt(), big_k))
        }
    }
}

/// `a * (1 - r^{K+1}) / (1 - r)`.
fn geometric_series(a: f64, r: f64, big_k: usize) -> f64 {
    if r == 1.0 {
        a * (big_k as f64 + 1.0)
    } else {
        a * (1.0 - r.powi(big_k as i32 + 1)) / (1.0 - r)
    }
}

/// Threshold parameters shared by every (PE, block) pair of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    pub horizon: f64,
    pub history_len: usize,
    /// Threshold in force between the forced initial event and the first slope.
    pub delta0: f64,
    /// Replace the adaptive rule with a constant threshold.
    pub fixed_threshold: Option<f64>,
    pub schedule: ThresholdSchedule,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            history_len: 1,
            delta0: 0.0,
            fixed_threshold: None,
            schedule: ThresholdSchedule::None,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), TriggerError> {
        let bad = |m: String| Err(TriggerError::InvalidParameter(m));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be > 0 (got {})", self.horizon));
        }
        if self.history_len == 0 {
            return bad("history_len must be >= 1".into());
        }
        if !(self.delta0 >= 0.0) {
            return bad(format!("delta0 must be >= 0 (got {})", self.delta0));
        }
        if let Some(f) = self.fixed_threshold {
            if !(f >= 0.0) {
                return bad(format!("fixed_threshold must be >= 0 (got {f})"));
            }
        }
        self.schedule.validate()
    }
}

/// Trigger bookkeeping for one (PE, block) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    last_sent_value: Vec<f64>,
    last_sent_iter: Option<usize>,
    /// Threshold before the schedule cap is applied.
    base_threshold: f64,
    /// Threshold in force at the current iteration.
    threshold: f64,
    slope_history: VecDeque<f64>,
    horizon: f64,
    history_len: usize,
    fixed_threshold: Option<f64>,
}

impl TriggerState {
    /// Fresh state; nothing has been sent yet.
    pub fn new(config: &TriggerConfig, block_len: usize) -> Self {
        let base = config.fixed_threshold.unwrap_or(config.delta0);
        Self {
            last_sent_value: vec![0.0; block_len],
            last_sent_iter: None,
            base_threshold: base,
            threshold: base,
            slope_history: VecDeque::with_capacity(config.history_len),
            horizon: config.horizon,
            history_len: config.history_len,
            fixed_threshold: config.fixed_threshold,
        }
    }

    pub fn last_sent_value(&self) -> &[f64] {
        &self.last_sent_value
    }

    pub fn last_sent_iter(&self) -> Option<usize> {
        self.last_sent_iter
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn slope_history(&self) -> impl Iterator<Item = f64> + '_ {
        self.slope_history.iter().copied()
    }

    /// Re-apply the schedule cap for iteration `k`.
    pub fn refresh(&mut self, k: usize, schedule: &ThresholdSchedule) {
        self.threshold = self.base_threshold.min(schedule.cap(k));
    }

    /// `||last_sent - current||`.
    pub fn drift(&self, current: &[f64]) -> Result<f64, TriggerError> {
        if current.len() != self.last_sent_value.len() {
            return Err(TriggerError::DimensionMismatch {
                expected: self.last_sent_value.len(),
                got: current.len(),
            });
        }
        Ok(self
            .last_sent_value
            .iter()
            .zip(current)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// True iff `||last_sent - current|| >= threshold`.
    pub fn check_event(&self, current: &[f64]) -> Result<bool, TriggerError> {
        Ok(self.drift(current)? >= self.threshold)
    }

    /// Record the forced initial broadcast at iteration `k`.
    pub fn initialize(
        &mut self,
        current: &[f64],
        k: usize,
        schedule: &ThresholdSchedule,
    ) -> Result<(), TriggerError> {
        self.drift(current)?;
        self.last_sent_value.copy_from_slice(current);
        self.last_sent_iter = Some(k);
        self.refresh(k, schedule);
        Ok(())
    }

    /// Record an event at iteration `k` and recompute the threshold from
    /// the slope history.
    pub fn update_on_trigger(
        &mut self,
        current: &[f64],
        k: usize,
        schedule: &ThresholdSchedule,
    ) -> Result<(), TriggerError> {
        let Some(last) = self.last_sent_iter else {
            return self.initialize(current, k, schedule);
        };
        if k <= last {
            return Err(TriggerError::NotAfterLastEvent { k, last });
        }
        let slope = self.drift(current)? / (k - last) as f64;
        if self.slope_history.len() == self.history_len {
            self.slope_history.pop_front();
        }
        self.slope_history.push_back(slope);
        self.base_threshold = match self.fixed_threshold {
            Some(f) => f,
            None => {
                let mean = self.slope_history.iter().sum::<f64>() / self.slope_history.len() as f64;
                mean * self.horizon
            }
        };
        self.last_sent_value.copy_from_slice(current);
        self.last_sent_iter = Some(k);
        self.refresh(k, schedule);
        Ok(())
    }
}
