//! `rwre`: config-driven experiment runner for the regeneration-based
//! estimators. `rwre sample-config <task>` prints a commented example
//! configuration; `rwre run --config <file>` executes it and writes
//! `results.csv` plus `provenance.json`.

mod config;
mod error;
mod tasks;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{sample_config, ExperimentConfig, TaskKind};
pub use error::CliError;
use tasks::run_task;

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random-walk-in-random-environment experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a TOML configuration file.
    Run(RunArgs),
    /// Print a commented example configuration for a task.
    SampleConfig {
        /// One of lambda-sweep, rate-curve, tilted, boundary-probe,
        /// oracle-crosscheck.
        #[arg(default_value = "lambda-sweep")]
        task: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Where to write results.csv and provenance.json (default: the
    /// config's `output.dir`, else the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic). Never affects results, only speed.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Print progress notes to stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::SampleConfig { task } => {
            let kind = match task.as_str() {
                "lambda-sweep" => TaskKind::LambdaSweep,
                "rate-curve" => TaskKind::RateCurve,
                "tilted" => TaskKind::Tilted,
                "boundary-probe" => TaskKind::BoundaryProbe,
                "oracle-crosscheck" => TaskKind::OracleCrosscheck,
                other => {
                    eprintln!(
                        "{}",
                        CliError::Config(format!("unknown task `{other}`")).record()
                    );
                    return ExitCode::FAILURE;
                }
            };
            print!("{}", sample_config(kind));
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{}", e.record());
                ExitCode::FAILURE
            }
        },
    }
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|source| CliError::Io {
        path: args.config.display().to_string(),
        source,
    })?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.workers > 0 {
        // Build the global pool before any parallel work; a failure here
        // only means a pool already exists, which is equally fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global();
    }
    if args.verbose > 0 {
        eprintln!(
            "running task {} with seed {} ({} cycles)",
            config.task.name(),
            config.seed,
            config.harvest.n_cycles
        );
    }

    let artifacts = run_task(&config, args.workers)?;

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let csv_path = out_dir.join("results.csv");
    fs::write(&csv_path, artifacts.csv.as_bytes()).map_err(|source| CliError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    let json_path = out_dir.join("provenance.json");
    let pretty = serde_json::to_string_pretty(&artifacts.provenance).expect("valid provenance");
    fs::write(&json_path, pretty.as_bytes()).map_err(|source| CliError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    if args.verbose > 0 {
        eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    }
    Ok(())
}
