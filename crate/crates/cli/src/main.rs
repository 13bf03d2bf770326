use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "scorelab", version, about = "Wasserstein rates, dimension estimates and diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// W_p distance between two measure CSV files.
    Wp {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Minkowski and (p,q)-Wasserstein dimension estimates of a measure CSV.
    Dim {
        measure: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical W_p convergence rate over the n-grid.
    EmpRate {
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end sampler error over the n-grid.
    PipelineRate {
        #[command(flatten)]
        common: Common,
    },
    /// Trains a score network on a measure CSV or a generated sample.
    TrainScore {
        /// Measure CSV; a sample of size `--n` is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Seeded invariant battery; exits nonzero if any check fails.
    Checks {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScoreArg {
    Exact,
    Trained,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

/// Flags shared by every subcommand. Each override replaces the config key
/// of the same name.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    exact_cutoff: Option<usize>,
    #[arg(long)]
    reference_factor: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    intrinsic_dim: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    mc_per_knot: Option<usize>,
    #[arg(long)]
    weight_bound: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    z_max: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
