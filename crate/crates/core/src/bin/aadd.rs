use std::path::PathBuf;
use std::process::ExitCode;

use aadd::{load_config, run_experiment, RunStatus};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aadd",
    version,
    about = "Federated poisoning and AADD detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Threads for client training; does not change results.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run {
        config,
        output_dir,
        seed,
        workers,
    } = Cli::parse().command;

    let result = load_config(&config).and_then(|mut cfg| {
        if let Some(dir) = output_dir {
            cfg.output_dir = dir;
        }
        if let Some(seed) = seed {
            cfg.master_seed = seed;
        }
        if let Some(w) = workers {
            cfg.workers = w;
        }
        run_experiment(&cfg)
    });
    match result {
        Ok(report) => {
            let m = report.confusion_matrix;
            println!(
                "tp={} fp={} fn={} tn={}  final accuracy {:.4}  delta {:+.2} pp ({:?})",
                m.tp,
                m.fp,
                m.fn_,
                m.tn,
                report.outcome.poisoned_accuracy,
                report.outcome.delta_pp,
                report.outcome.classification
            );
            match report.run.status {
                RunStatus::Completed { .. } => ExitCode::SUCCESS,
                RunStatus::Halted { round } => {
                    eprintln!("halted: every client blacklisted before round {round}");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
