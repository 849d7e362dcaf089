//! `superpose`: batch front end for statistics, fitting, simulation and the
//! Riccati solver of superposed self-exciting processes.
//!
//! Exit status: 0 when every requested output was written, 1 when a run
//! failed or some inputs could not be processed, 2 for invalid invocations
//! and configuration.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use output::Format;

#[derive(Debug, Parser, Serialize)]
#[command(name = "superpose", version, about = "Long-memory superposed jump processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory; without it the main table goes to standard output.
    /// Not part of the config hash, since it does not change results.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Master seed for all randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Summary statistics (Ave, Var, CV, Jmp, Skw) of count series.
    Stats {
        /// CSV files or directories of CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Sample autocorrelation of count series.
    Acf {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Largest lag (in samples).
        #[arg(long, default_value_t = 14)]
        lags: usize,
    },
    /// Identify model parameters from count series.
    Fit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Autocorrelation lags 1..=N used by the fit.
        #[arg(long, default_value_t = 14)]
        lags: usize,
        /// `fixed` (w = 1), `fit` (by skewness) or a fixed value in [0, 1].
        #[arg(long, default_value = "fixed")]
        w: String,
    },
    /// Monte Carlo sample paths and ensemble statistics.
    Simulate(SimArgs),
    /// Riccati and Lyapunov solutions for the aggregation model.
    Riccati {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Horizon cap of the time integration.
        #[arg(long, default_value_t = 1e4)]
        t_max: f64,
        /// Spacing of the exported trajectory.
        #[arg(long, default_value_t = 0.1)]
        interval: f64,
    },
    /// Variance and autocorrelation of previous, MF and AG models across w.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
        w: Vec<f64>,
        /// Time step of the Lyapunov solver.
        #[arg(long, default_value_t = 1e-3)]
        ode_dt: f64,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Speed-grid size.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub dt: f64,
    /// Replicates; 0 skips the Monte Carlo part of `compare`.
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    /// Recorded time per replicate.
    #[arg(long, default_value_t = 200.0)]
    pub horizon: f64,
    /// Burn-in; defaults to 20·R/(1-M₁).
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Sampling interval of recorded values.
    #[arg(long, default_value_t = 0.1)]
    pub interval: f64,
    /// Comma-separated autocorrelation lags.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0])]
    pub lags: Vec<f64>,
    /// Number of replicate paths written to the path table.
    #[arg(long, default_value_t = 5)]
    pub paths: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{} input(s) failed:", failed.len());
            for (path, reason) in &failed {
                eprintln!("  {}: {reason}", path.display());
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
