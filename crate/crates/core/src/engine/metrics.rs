use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::comm::CommStats;
use crate::objectives::ModelState;

use super::{EngineError, RunConfig};

/// Exact header of the metrics stream.
pub const METRICS_HEADER: &str = "iter,loss,disagreement,messages_cum,volume_cum,events";

/// One row of the metrics stream. `iter = k` describes the state after `k`
/// iterations; `events` counts block broadcasts during iteration `k - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    /// Global loss at the model averaged across PEs.
    pub loss: f64,
    /// `sum_i ||x_i - x_bar||^2 / n`.
    pub disagreement: f64,
    pub messages_cum: u64,
    pub volume_cum: u64,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub initial_loss: f64,
    pub initial_disagreement: f64,
    pub final_model: ModelState,
    pub final_loss: f64,
    pub stats: CommStats,
    /// Untriggered checks where `||x_hat - x|| < delta` failed. Always zero
    /// unless the values became non-finite.
    pub epsilon_violations: u64,
    /// `(1/K) sum_k ||grad f(x_bar_k)||^2`, when tracked.
    pub avg_grad_norm_sq: Option<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub lipschitz: Option<f64>,
    pub iterations_per_epoch: f64,
    pub wall_time_secs: f64,
}

impl RunMetrics {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EngineError> {
        write_metrics_csv(&self.rows, out)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EngineError> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn meta(&self, config: &RunConfig) -> RunMeta {
        RunMeta {
            config: config.clone(),
            seed: config.seed,
            rho: self.rho,
            gamma_effective: self.gamma,
            lipschitz: self.lipschitz,
            iterations_per_epoch: self.iterations_per_epoch,
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
            messages: self.stats.messages_sent,
            volume: self.stats.scalar_volume,
            epsilon_violations: self.epsilon_violations,
            wall_time_secs: self.wall_time_secs,
        }
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

/// JSON sidecar describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub seed: u64,
    pub rho: f64,
    pub gamma_effective: f64,
    pub lipschitz: Option<f64>,
    pub iterations_per_epoch: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub messages: u64,
    pub volume: u64,
    pub epsilon_violations: u64,
    pub wall_time_secs: f64,
}
