//! Regular (D-PSGD) and event-triggered training loops.
//!
//! One iteration of the event-triggered loop on PE `i`:
//!
//! 1. every block whose drift from its last broadcast reaches the block's
//!    threshold (and every block at `k = 0`) is put into both neighbors'
//!    windows and gets a new threshold;
//! 2. puts are applied at the barrier;
//! 3. `x_{k+1,i} = sum_j W_ji x_hat_{k,j} - gamma * grad F_i(x_hat_{k,i}; xi)`,
//!    with neighbor values read from PE `i`'s window. With `self_fresh` the
//!    own column and the gradient use the current `x_{k,i}` instead.

mod config;
mod metrics;
mod sim;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    Algorithm, GammaScale, InitKind, InitSpec, MixingSpec, RunConfig, SparsifySpec, Topology,
};
pub use metrics::{write_metrics_csv, MetricsRow, RunMeta, RunMetrics, METRICS_HEADER};
pub use sim::{run, Simulation, StepReport};
pub use sweep::{run_sweep, write_sweep_csv, SweepGrid, SweepOutcome, SweepPoint, SweepRow};

use crate::comm::{message_percentage, CommError};
use crate::mixing::MixingError;
use crate::objectives::ObjectiveError;
use crate::trigger::TriggerError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl EngineError {
    /// True when the failure stems from the configuration rather than execution.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            EngineError::Config(_)
                | EngineError::Mixing(_)
                | EngineError::Trigger(TriggerError::InvalidParameter(_))
                | EngineError::Objective(ObjectiveError::InvalidParameter(_))
                | EngineError::Comm(CommError::BadPercentage(_))
        )
    }
}

/// Regular vs event-triggered arms run on identical data, seed and step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub final_loss_regular: f64,
    pub final_loss_event: f64,
    /// `|final_loss_event - final_loss_regular| / final_loss_regular`.
    pub final_loss_rel_gap: f64,
    /// Largest per-iteration `|loss_event - loss_regular|`.
    pub loss_trace_max_gap: f64,
    pub message_pct: f64,
    pub volume_pct: f64,
    pub messages_regular: u64,
    pub messages_event: u64,
    pub volume_regular: u64,
    pub volume_event: u64,
}

/// Both arms' metrics plus the summary.
pub struct Comparison {
    pub regular: RunMetrics,
    pub event: RunMetrics,
    pub report: CompareReport,
}

pub fn compare(base: &RunConfig) -> Result<Comparison, EngineError> {
    let regular = run(&base.regular_arm())?;
    let event = run(&base.event_arm())?;
    let report = summarize(&regular, &event)?;
    Ok(Comparison {
        regular,
        event,
        report,
    })
}

pub fn summarize(regular: &RunMetrics, event: &RunMetrics) -> Result<CompareReport, EngineError> {
    let pct = message_percentage(&event.stats, &regular.stats)?;
    let loss_trace_max_gap = regular
        .rows
        .iter()
        .zip(&event.rows)
        .map(|(a, b)| (a.loss - b.loss).abs())
        .fold(0.0, f64::max);
    Ok(CompareReport {
        final_loss_regular: regular.final_loss,
        final_loss_event: event.final_loss,
        final_loss_rel_gap: (event.final_loss - regular.final_loss).abs()
            / regular.final_loss.abs(),
        loss_trace_max_gap,
        message_pct: pct.message_pct,
        volume_pct: pct.volume_pct,
        messages_regular: regular.stats.messages_sent,
        messages_event: event.stats.messages_sent,
        volume_regular: regular.stats.scalar_volume,
        volume_event: event.stats.scalar_volume,
    })
}
