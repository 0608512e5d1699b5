use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, RunConfig, SparsifySpec};
use super::{compare, run, EngineError, RunMetrics};

/// Lists of values to substitute into a base config. Points are the
/// cartesian product in the order `n`, `gamma`, `horizon`, `topk_percent`
/// (last axis varies fastest). An omitted axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub n: Option<Vec<usize>>,
    pub gamma: Option<Vec<f64>>,
    pub horizon: Option<Vec<f64>>,
    pub topk_percent: Option<Vec<f64>>,
}

/// Values taken by one grid point. `None` means the axis was not swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: Option<usize>,
    pub gamma: Option<f64>,
    pub horizon: Option<f64>,
    pub topk_percent: Option<f64>,
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub n: usize,
    pub gamma: f64,
    pub horizon: Option<f64>,
    pub topk_percent: Option<f64>,
    pub final_loss: f64,
    pub final_loss_regular: f64,
    pub message_pct: f64,
    pub volume_pct: f64,
    pub messages: u64,
    pub volume: u64,
}

pub struct SweepOutcome {
    pub config: RunConfig,
    /// Metrics of the configured algorithm.
    pub metrics: RunMetrics,
    /// Regular baseline, present only for event-triggered points.
    pub baseline: Option<RunMetrics>,
    pub row: SweepRow,
}

impl SweepGrid {
    /// Expand into grid points. Fails if no axis is given or any axis is empty.
    pub fn points(&self) -> Result<Vec<SweepPoint>, EngineError> {
        fn axis<T: Copy>(name: &str, v: &Option<Vec<T>>) -> Result<Vec<Option<T>>, EngineError> {
            match v {
                None => Ok(vec![None]),
                Some(v) if v.is_empty() => {
                    Err(EngineError::Config(format!("sweep axis `{name}` is empty")))
                }
                Some(v) => Ok(v.iter().copied().map(Some).collect()),
            }
        }
        if self.n.is_none()
            && self.gamma.is_none()
            && self.horizon.is_none()
            && self.topk_percent.is_none()
        {
            return Err(EngineError::Config("sweep grid has no axes".into()));
        }
        let ns = axis("n", &self.n)?;
        let gammas = axis("gamma", &self.gamma)?;
        let horizons = axis("horizon", &self.horizon)?;
        let topks = axis("topk_percent", &self.topk_percent)?;
        let mut out = Vec::new();
        for &n in &ns {
            for &gamma in &gammas {
                for &horizon in &horizons {
                    for &topk_percent in &topks {
                        out.push(SweepPoint {
                            n,
                            gamma,
                            horizon,
                            topk_percent,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

impl SweepPoint {
    /// `base` with this point's values substituted, validated.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig, EngineError> {
        let mut cfg = base.clone();
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if (self.horizon.is_some() || self.topk_percent.is_some())
            && cfg.algorithm == Algorithm::Regular
        {
            return Err(EngineError::Config(
                "horizon and topk_percent axes need the eventgrad algorithm".into(),
            ));
        }
        if let Some(h) = self.horizon {
            let mut t = cfg.trigger_config();
            t.horizon = h;
            cfg.trigger = Some(t);
        }
        if let Some(p) = self.topk_percent {
            cfg.sparsify = Some(SparsifySpec { topk_percent: p });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run every grid point on a pool of `threads` workers. Results come back in
/// grid order and do not depend on the thread count.
pub fn run_sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    threads: usize,
) -> Result<Vec<SweepOutcome>, EngineError> {
    let configs = grid
        .points()?
        .iter()
        .map(|p| p.apply(base))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| EngineError::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| {
        configs
            .into_par_iter()
            .enumerate()
            .map(|(idx, cfg)| run_point(idx, cfg))
            .collect()
    })
}

fn run_point(point: usize, config: RunConfig) -> Result<SweepOutcome, EngineError> {
    let (metrics, baseline, report) = match config.algorithm {
        Algorithm::Regular => (run(&config)?, None, None),
        Algorithm::Eventgrad => {
            let c = compare(&config)?;
            (c.event, Some(c.regular), Some(c.report))
        }
    };
    let row = SweepRow {
        point,
        n: config.n,
        gamma: config.gamma,
        horizon: config.trigger.as_ref().map(|t| t.horizon),
        topk_percent: config.sparsify.map(|s| s.topk_percent),
        final_loss: metrics.final_loss,
        final_loss_regular: report
            .as_ref()
            .map_or(metrics.final_loss, |r| r.final_loss_regular),
        message_pct: report.as_ref().map_or(100.0, |r| r.message_pct),
        volume_pct: report.as_ref().map_or(100.0, |r| r.volume_pct),
        messages: metrics.stats.messages_sent,
        volume: metrics.stats.scalar_volume,
    };
    Ok(SweepOutcome {
        config,
        metrics,
        baseline,
        row,
    })
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
