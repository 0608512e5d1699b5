use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eventgrad_cli::{
    cmd_bound, cmd_compare, cmd_run, cmd_sweep, sweep_threads, CliError, ExperimentConfig,
    Overrides,
};

/// Simulate decentralized SGD with regular or event-triggered communication.
#[derive(Parser)]
#[command(name = "eventgrad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write metrics.csv and meta.json.
    Run(Common),
    /// Run the regular and event-triggered arms and report message savings.
    Compare(Common),
    /// Run every point of the configured grid.
    Sweep(Common),
    /// Print the convergence-bound report as JSON.
    Bound(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (common, cmd) = match &cli.command {
        Command::Run(c) | Command::Compare(c) | Command::Sweep(c) | Command::Bound(c) => {
            (c, &cli.command)
        }
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let ov = Overrides {
        out: common.out.clone(),
        seed: common.seed,
    };
    match cmd {
        Command::Run(_) => {
            let out = cmd_run(cfg, &ov)?;
            eprintln!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Compare(_) => print_json(&cmd_compare(cfg, &ov)?)?,
        Command::Sweep(_) => {
            let threads = sweep_threads()?;
            let out = cmd_sweep(cfg, &ov, threads)?;
            eprintln!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Bound(_) => print_json(&cmd_bound(cfg, &ov)?)?,
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
