//! Configuration loading and subcommand implementations for the `eventgrad`
//! binary. Kept in a library so the commands can be tested in-process.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use eventgrad_core::analysis::{bound_report, BoundInputs, BoundReport, ConstantEstimates};
use eventgrad_core::engine::{
    run_sweep, write_sweep_csv, Algorithm, EngineError, GammaScale, RunConfig, SweepGrid,
};
use eventgrad_core::{compare, estimate_constants, RunMetrics, Simulation, ThresholdSchedule};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "EVENTGRAD_THREADS";

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration (exit 2).
    Config(String),
    /// Anything that went wrong after the configuration was accepted (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Options for the `bound` subcommand. Unset constants are estimated from
/// the run's objectives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSpec {
    /// Defaults to the run's trigger schedule, or `g = 0` for a regular run.
    pub schedule: Option<ThresholdSchedule>,
    /// Defaults to the run's effective step size.
    pub gamma: Option<f64>,
    pub iterations: Option<usize>,
    pub lipschitz: Option<f64>,
    pub sigma: Option<f64>,
    pub varsigma: Option<f64>,
    pub f0_minus_fstar: Option<f64>,
    /// Optimum used when no closed form exists.
    pub f_star: Option<f64>,
    /// Probe count for the estimates (default 64).
    pub samples: Option<usize>,
    /// Also run the engine at the corollary step size and report the
    /// measured average squared gradient norm.
    pub measure: bool,
}

/// Top-level experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The run, or for `compare` the event-triggered arm.
    pub run: RunConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub bound: Option<BoundSpec>,
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn apply(mut self, ov: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = ov.seed {
            self.run.seed = seed;
        }
        if let Some(out) = &ov.out {
            self.out = Some(out.clone());
        }
        self.run.validate()?;
        Ok(self)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn write_run(dir: &Path, config: &RunConfig, metrics: &RunMetrics) -> anyhow::Result<()> {
    create_dir(dir)?;
    let path = dir.join("metrics.csv");
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    metrics.write_csv(BufWriter::new(f))?;
    write_json(&dir.join("meta.json"), &metrics.meta(config))
}

/// `run`: writes `<out>/metrics.csv` and `<out>/meta.json`.
pub fn cmd_run(cfg: ExperimentConfig, ov: &Overrides) -> Result<PathBuf, CliError> {
    let cfg = cfg.apply(ov)?;
    let metrics = eventgrad_core::run(&cfg.run)?;
    let out = cfg.out_dir();
    write_run(&out, &cfg.run, &metrics)?;
    Ok(out)
}

/// `compare`: both arms under `<out>/regular` and `<out>/eventgrad`, plus
/// `<out>/report.json`.
pub fn cmd_compare(
    cfg: ExperimentConfig,
    ov: &Overrides,
) -> Result<eventgrad_core::CompareReport, CliError> {
    let cfg = cfg.apply(ov)?;
    let cmp = compare(&cfg.run)?;
    let out = cfg.out_dir();
    write_run(&out.join("regular"), &cfg.run.regular_arm(), &cmp.regular)?;
    write_run(&out.join("eventgrad"), &cfg.run.event_arm(), &cmp.event)?;
    write_json(&out.join("report.json"), &cmp.report)?;
    Ok(cmp.report)
}

/// Worker count for sweeps: `EVENTGRAD_THREADS` if set, else all cores.
pub fn sweep_threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// `sweep`: `<out>/sweep.csv` plus one directory per grid point.
pub fn cmd_sweep(
    cfg: ExperimentConfig,
    ov: &Overrides,
    threads: usize,
) -> Result<PathBuf, CliError> {
    let cfg = cfg.apply(ov)?;
    let grid = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("missing `sweep` section".into()))?;
    let outcomes = run_sweep(&cfg.run, &grid, threads)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    for o in &outcomes {
        let dir = out.join(format!("point_{:04}", o.row.point));
        write_run(&dir, &o.config, &o.metrics)?;
        if let Some(base) = &o.baseline {
            write_run(&dir.join("regular"), &o.config.regular_arm(), base)?;
        }
    }
    let path = out.join("sweep.csv");
    let f = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(CliError::Runtime)?;
    let rows: Vec<_> = outcomes.iter().map(|o| o.row).collect();
    write_sweep_csv(&rows, BufWriter::new(f))?;
    Ok(out)
}

/// Measured side of the bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub gamma: f64,
    pub iterations: usize,
    /// `(1/K) sum_k ||grad f(x_bar_k)||^2`.
    pub avg_grad_norm_sq: f64,
    /// Measured value is at most the corollary bound. Informational only.
    pub within_corollary_bound: Option<bool>,
}

/// Output of `bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    #[serde(flatten)]
    pub report: BoundReport,
    pub estimates: ConstantEstimates,
    pub measured: Option<Measured>,
}

/// `bound`: evaluate both convergence bounds for the configured run.
pub fn cmd_bound(cfg: ExperimentConfig, ov: &Overrides) -> Result<BoundOutput, CliError> {
    let cfg = cfg.apply(ov)?;
    let spec = cfg.bound.clone().unwrap_or_default();
    let run = &cfg.run;
    let mixing = run.mixing.build(run.n)?;
    let objectives = run
        .objective
        .build(run.n, run.seed)
        .map_err(EngineError::from)?;
    let est = estimate_constants(
        &objectives,
        &mixing,
        spec.samples.unwrap_or(64),
        run.seed,
        spec.f_star,
    )
    .map_err(|e| CliError::Runtime(e.into()))?;

    let lipschitz = spec.lipschitz.unwrap_or(est.lipschitz);
    let gamma = spec.gamma.unwrap_or(match run.gamma_scale {
        GammaScale::Absolute => run.gamma,
        GammaScale::InverseLipschitz => run.gamma / lipschitz,
    });
    let schedule = spec.schedule.unwrap_or(match run.algorithm {
        Algorithm::Regular => ThresholdSchedule::ConstantCap { c: 0.0 },
        Algorithm::Eventgrad => run.trigger_config().schedule,
    });
    schedule
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let inputs = BoundInputs {
        gamma,
        lipschitz,
        sigma: spec.sigma.unwrap_or(est.sigma),
        varsigma: spec.varsigma.unwrap_or(est.varsigma),
        rho: mixing.spectral_gap(),
        n: run.n,
        iterations: spec.iterations.unwrap_or(run.iterations),
        f0_minus_fstar: spec.f0_minus_fstar.unwrap_or_else(|| est.f0_minus_fstar()),
        schedule,
    };
    let report = bound_report(&inputs).map_err(|e| CliError::Config(e.to_string()))?;

    let measured = if spec.measure {
        let step = report.constants.corollary_step_size;
        let mut cfg = run.clone();
        cfg.gamma = step;
        cfg.gamma_scale = GammaScale::Absolute;
        cfg.iterations = inputs.iterations;
        cfg.validate()?;
        let mut sim = Simulation::from_parts(&cfg, mixing, objectives)?;
        sim.track_grad_norm(true);
        let m = sim.run(cfg.iterations)?;
        let avg = m.avg_grad_norm_sq.unwrap_or(f64::NAN);
        Some(Measured {
            gamma: step,
            iterations: cfg.iterations,
            avg_grad_norm_sq: avg,
            within_corollary_bound: report.rhs_corollary1.map(|b| avg <= b),
        })
    } else {
        None
    };
    Ok(BoundOutput {
        report,
        estimates: est,
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"{"run": {"n": 4, "algorithm": "regular", "gamma": 0.05, "iterations": 10}}"#;

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err =
            ExperimentConfig::from_json("{\n  \"run\": {\n    \"n\": 4,\n  }\n}").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        let text = MINIMAL.replacen('{', r#"{"extra": 1, "#, 1);
        assert_eq!(
            ExperimentConfig::from_json(&text).unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn seed_override_applies() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let ov = Overrides {
            seed: Some(42),
            ..Overrides::default()
        };
        assert_eq!(cfg.apply(&ov).unwrap().run.seed, 42);
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        let text = MINIMAL.replace("\"n\": 4", "\"n\": 2");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let err = cfg.apply(&Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}
