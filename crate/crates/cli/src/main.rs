//! Command-line front end for the status-update control experiments: solve
//! per-sensor processes, train Q-learning, simulate policies, schedule
//! under a per-slot command budget, sweep parameters, and export policy
//! documents.

mod config;
mod runner;

use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

use config::{resolve, FileConfig, Overrides, Scale, SweepParam, Workload};
use runner::Failure;

#[derive(Parser)]
#[command(
    name = "aoi-edge",
    version = env!("BUILD_GIT_DESCRIBE"),
    about = "Age-of-information control for cached sensor measurements",
    long_about = "Solves, trains, and simulates status-update control at an edge node \
                  serving cached measurements from energy-harvesting sensors.\n\n\
                  Configuration precedence, highest first: the AOI_EDGE_OUT environment \
                  variable (output directory only), command-line flags, the --config \
                  file, the scale preset, built-in defaults."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for environment and exploration randomness.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; the AOI_EDGE_OUT environment variable wins.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Experiment scale: published schedules or desk-sized ones.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Worker threads for parallel episodes.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Policy to run: via, greedy, greedy-threshold, or random for
    /// simulate; all or truncation for coupled.
    #[arg(long, global = true, value_name = "NAME")]
    policy: Option<String>,
    /// Battery threshold of the greedy-threshold policy.
    #[arg(long, global = true, value_name = "N")]
    bth: Option<u32>,
    /// Per-slot command budget; 0 or absent sweeps 1..=K on coupled runs.
    #[arg(long = "M", global = true, value_name = "N")]
    limit: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve each sensor's process by value iteration and export policies.
    SolveVia,
    /// Train tabular Q-learning and export tables, curve, and report.
    TrainQ,
    /// Simulate one policy and report average costs.
    Simulate {
        /// Also dump the first slots of episode 0 as a compressed trace.
        #[arg(long)]
        trace: bool,
    },
    /// Solve and evaluate scheduling under a per-slot command budget.
    Coupled,
    /// Solve sensor 0 across parameter values and compare command regions.
    Sweep {
        /// Which parameter to vary.
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', required = true, value_name = "LIST")]
        values: Vec<String>,
    },
    /// Solve sensor 0 and export a single policy document.
    ExportPolicy,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        scale: cli.scale,
        workers: cli.workers,
        policy: cli.policy.clone(),
        battery_threshold: cli.bth,
        limit: cli.limit,
    };
    let workload = match cli.command {
        Command::SolveVia | Command::Sweep { .. } | Command::ExportPolicy => Workload::Solve,
        Command::TrainQ => Workload::Train,
        Command::Simulate { .. } => Workload::Simulate,
        Command::Coupled => Workload::Coupled,
    };
    let resolved = resolve(&file, &overrides, workload)?;
    if let Some(workers) = resolved.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| {
                Failure::Run(aoi_edge::Error::InvalidParameter(format!(
                    "worker pool: {e}"
                )))
            })?;
    }
    match cli.command {
        Command::SolveVia => runner::solve_via(&resolved),
        Command::TrainQ => runner::train_q(&resolved),
        Command::Simulate { trace } => runner::simulate(&resolved, trace),
        Command::Coupled => runner::coupled(&resolved),
        Command::Sweep { param, values } => runner::sweep(&resolved, param, &values),
        Command::ExportPolicy => runner::export_policy(&resolved),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(cli) {
        eprintln!("{failure}");
        process::exit(failure.exit_code());
    }
}
