use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tacqr_cli::{commands, io};

/// Configuration-driven harness for tail-allocation conformalized quantile
/// regression: simulations, CSV fitting, oracle tables, and diagnostics,
/// all emitted as deterministic CSV/JSON artifacts.
#[derive(Parser)]
#[command(name = "tacqr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replicate protocol; writes replicates.csv and summary.json.
    Simulate(CommonArgs),
    /// Fit on a CSV and write intervals.csv for a prediction CSV.
    FitPredict(CommonArgs),
    /// Write the oracle table for the configured law; writes oracle.csv.
    Oracle(CommonArgs),
    /// Run the theory diagnostics; writes diagnostics.json.
    Diagnose(CommonArgs),
}

/// Flags shared by every subcommand; flags override config file fields.
#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Simulate(a) | Command::FitPredict(a) | Command::Oracle(a) | Command::Diagnose(a) => a,
    };
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: could not configure {threads} threads: {e}");
        }
    }
    let mut config = io::load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&config),
        Command::FitPredict(_) => commands::fit_predict(&config),
        Command::Oracle(_) => commands::oracle_table(&config),
        Command::Diagnose(_) => commands::diagnose(&config),
    }
}
