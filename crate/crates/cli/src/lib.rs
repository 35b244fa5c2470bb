//! Command-line front end: `fit`, `predict`, `simulate`, and `experiment`
//! over a single JSON run configuration.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 configuration or
//! input error.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mldp::error::{Error, Result};

pub use commands::{cmd_experiment, cmd_fit, cmd_predict, cmd_simulate};
pub use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mldp",
    version,
    about = "Multilinear DP mixture-of-regressions: fit, predict, simulate, experiment"
)]
struct Cli {
    /// Override the config's sampler seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write trace.ndjson + diagnostics.csv.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the trace and diagnostics.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also cache the processed design matrix as design.csv.
        #[arg(long)]
        dump_design: bool,
    },
    /// Append a y_hat column to an input CSV using a fitted trace.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Draw prior weight tensors and run the moment checks.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Repeated random-split evaluation, optionally against the DP baseline.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Also run the single-basis DP baseline on identical splits.
        #[arg(long)]
        dp_baseline: bool,
        /// Write the JSON report here (stdout gets the human table).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &std::path::Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut run = RunConfig::load(path)?;
    if let Some(seed) = seed {
        run.sampler.seed = seed;
    }
    Ok(run)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            config,
            out_dir,
            dump_design,
        } => {
            let run = load_config(&config, cli.seed)?;
            let out = cmd_fit(&run, &out_dir, dump_design)?;
            println!(
                "fit: {} samples, {} snapshots -> {}",
                out.n_samples,
                out.n_snapshots,
                out.trace_path.display()
            );
            println!(
                "fit: final log joint {:.4}, {} live clusters, diagnostics -> {}",
                out.final_log_joint,
                out.final_live_clusters,
                out.diagnostics_path.display()
            );
            if let Some(path) = &out.design_path {
                println!("fit: design matrix -> {}", path.display());
            }
            Ok(())
        }
        Command::Predict {
            config,
            trace,
            input,
            output,
        } => {
            let run = load_config(&config, cli.seed)?;
            let rows = cmd_predict(&run, &trace, &input, &output)?;
            println!("predict: {rows} rows -> {}", output.display());
            Ok(())
        }
        Command::Simulate { config, out_dir } => {
            let run = load_config(&config, cli.seed)?;
            let out = cmd_simulate(&run, &out_dir)?;
            println!(
                "simulate: weights -> {}, moment summary -> {} (all_ok = {})",
                out.weights_path.display(),
                out.summary_path.display(),
                out.all_ok
            );
            Ok(())
        }
        Command::Experiment {
            config,
            dp_baseline,
            out,
        } => {
            let run = load_config(&config, cli.seed)?;
            let report = cmd_experiment(&run, dp_baseline)?;
            print_experiment_table(&report);
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            match out {
                Some(path) => {
                    std::fs::write(&path, json + "\n").map_err(|e| {
                        Error::Input(format!("cannot write '{}': {e}", path.display()))
                    })?;
                    println!("report -> {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}

fn print_experiment_table(report: &commands::ExperimentOutput) {
    println!("model        {:>10}  {:>10}  reps", "mean", "std");
    println!(
        "mldp-mrm     {:>10.5}  {:>10.5}  {}",
        report.mldp.mean, report.mldp.std, report.mldp.n
    );
    if let Some(dp) = &report.dp {
        println!(
            "dp-mrm       {:>10.5}  {:>10.5}  {}",
            dp.mean, dp.std, dp.n
        );
    }
    if let Some(wins) = report.wins_vs_dp {
        println!(
            "mldp-mrm better than dp-mrm ({}) in {wins}/{} repetitions",
            report.metric, report.mldp.n
        );
    }
}

/// CLI entry: parse, dispatch, and map errors to exit codes.
pub fn run() -> i32 {
    let _ = env_logger::try_init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
