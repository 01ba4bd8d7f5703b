use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use props_cli::commands::{self, AccountRequest};
use props_cli::report::{render_table, summarize, write_outcome, write_summary};
use props_cli::{execute, ExperimentConfig, Grid};

#[derive(Parser)]
#[command(
    name = "props",
    version,
    about = "Label-private preference alignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the world of one seed to a dataset file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset path; defaults to `<output_dir>/world-<seed>.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method, epsilon and seed at a single K.
    Run(RunArgs),
    /// Run the full epsilon by K grid.
    Sweep(RunArgs),
    /// Print preference- and labeler-level budgets.
    Account {
        #[arg(long)]
        epsilon: f64,
        /// Labels contributed by one labeler.
        #[arg(long)]
        k: Option<u64>,
        #[arg(long, default_value_t = 1e-5)]
        delta_prime: f64,
        /// Also print the DP-SGD noise multiplier at this delta.
        #[arg(long)]
        delta: Option<f64>,
        /// Take k from the busiest labeler of a dataset file.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Re-score stored models against a world file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        heldout_fraction: f64,
    },
    /// Rebuild the summary table from result files of one config.
    Aggregate {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// CSV path; prints the table when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; one per core when absent.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(args: RunArgs, grid: Grid) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let outcome = execute(&config, grid, args.jobs)?;
    let written = write_outcome(&config.output_dir, &outcome)?;
    print!("{}", render_table(&summarize(&outcome.results)?));
    println!("results: {}", written.results.display());
    println!("summary: {}", written.summary.display());
    for f in &outcome.failures {
        eprintln!(
            "cell failed: {} eps={:?} K={:?} seed={}: {}",
            f.method, f.epsilon, f.stages, f.seed, f.error
        );
    }
    if let Some(path) = written.failures {
        eprintln!("failures: {}", path.display());
    }
    if outcome.results.is_empty() {
        bail!("all {} cells failed", outcome.failures.len());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let config = ExperimentConfig::load(&config)?;
            let summary = commands::generate(&config, seed, out.as_deref())?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Run(args) => run(args, Grid::Run)?,
        Command::Sweep(args) => run(args, Grid::Sweep)?,
        Command::Account {
            epsilon,
            k,
            delta_prime,
            delta,
            dataset,
            json,
        } => {
            let report = commands::account(&AccountRequest {
                epsilon,
                k,
                delta_prime,
                delta,
                dataset,
            })?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                print!("{}", report.render());
            }
        }
        Command::Eval {
            results,
            world,
            heldout_fraction,
        } => {
            for r in commands::eval(&results, &world, heldout_fraction)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Aggregate { results, out } => {
            let rows = commands::aggregate(&results)?;
            match out {
                Some(path) => write_summary(&path, &rows)?,
                None => print!("{}", render_table(&rows)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
