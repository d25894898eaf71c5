use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cbsql::harness::{
    aggregate_by_agent, read_records, reproduce_chainwalk, run_experiment_with_workers,
    summary_to_csv, workers_from_env, write_records, write_text, ExperimentConfig,
    ReproduceOptions,
};
use clap::{Parser, Subcommand};

/// Count-based soft Q-learning experiments.
///
/// Parallel runs use the worker count in CBSQL_WORKERS (default: serial for
/// `run`, all cores for `reproduce-chainwalk`). Results do not depend on it.
#[derive(Parser)]
#[command(name = "cbsql", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write per-episode
    /// returns as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare Q-learning, fixed-temperature SQL and CBSQL on the noisy chain
    /// walk and print a PASS/FAIL verdict.
    ReproduceChainwalk {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Summary CSV (`agent,trailing_mean,trailing_std`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-episode CSV for every agent.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Summarize a per-episode CSV: trailing-window mean and std per agent.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        window: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(out) = out {
                cfg.output = out;
            }
            let records = run_experiment_with_workers(&cfg, workers_from_env().unwrap_or(1))?;
            write_records(&cfg.output, &records)?;
            eprintln!(
                "wrote {} records ({} runs x {} episodes) to {}",
                records.len(),
                cfg.runs,
                cfg.episodes,
                cfg.output.display()
            );
        }
        Command::ReproduceChainwalk {
            runs,
            episodes,
            window,
            seed,
            out,
            records,
        } => {
            let opts = ReproduceOptions {
                runs,
                episodes,
                window,
                base_seed: seed,
                ..ReproduceOptions::default()
            };
            let report = reproduce_chainwalk(&opts)?;
            print!("{}", report.render());
            if let Some(path) = out {
                write_text(&path, &summary_to_csv(&report.summaries))?;
            }
            if let Some(path) = records {
                write_records(&path, &report.records)?;
            }
            if !report.verdict() {
                bail!("chain-walk comparison failed");
            }
        }
        Command::Aggregate { input, window } => {
            let records = read_records(&input)?;
            let rows = aggregate_by_agent(&records, window)?;
            print!("{}", summary_to_csv(&rows));
        }
    }
    Ok(())
}
