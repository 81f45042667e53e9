use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

#[derive(Parser, Debug)]
#[command(name = "spikeslab", version, about = "Spike-and-slab quasi-posterior sampling and variational fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `runs/<command>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RegressionInput {
    /// Design matrix CSV; the data are simulated when absent.
    #[arg(long, requires = "y")]
    pub x: Option<PathBuf>,
    /// Response CSV (one column).
    #[arg(long, requires = "x")]
    pub y: Option<PathBuf>,
    /// True coefficients CSV (one column), used for selection reports.
    #[arg(long)]
    pub theta_star: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic data set for the configured mode.
    Simulate(Common),
    /// Fits a sparse linear regression by MCMC or a variational family.
    FitRegression {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: RegressionInput,
    },
    /// Gaussian graphical model selection by node-wise regressions.
    FitGgm {
        #[command(flatten)]
        common: Common,
        /// Data matrix CSV (rows are observations).
        #[arg(long)]
        z: Option<PathBuf>,
    },
    /// Sparse leading principal component.
    FitSpca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<PathBuf>,
        /// Reference direction for the projection error.
        #[arg(long)]
        theta_star: Option<PathBuf>,
    },
    /// Selection, KL-to-limit and moment diagnostics of a regression chain.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: RegressionInput,
    },
    /// Wall-clock cost table over the configured grid of dimensions.
    Benchmark(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::FitRegression { common, input } => commands::fit_regression(&common, &input),
        Command::FitGgm { common, z } => commands::fit_ggm(&common, z.as_deref()),
        Command::FitSpca { common, x, theta_star } => commands::fit_spca(&common, x.as_deref(), theta_star.as_deref()),
        Command::Diagnose { common, input } => commands::diagnose(&common, &input),
        Command::Benchmark(c) => commands::benchmark(&c),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}
