//! `supreme`: normalize free-text ECG reports into a standardized query
//! vocabulary, pre-train a signal/query fusion model on the derived labels,
//! and evaluate zero-shot against arbitrary prompt lists.
//!
//! Exit codes: 0 success, 1 configuration error, 2 external-client failure,
//! 3 data inconsistency.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::RunConfig;
use error::Result;

#[derive(Parser)]
#[command(name = "supreme", version, about = "ECG report supervision pipeline")]
struct Cli {
    /// Run configuration JSON file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override a config key by dotted path, e.g. --set train.lr=0.01.
    /// Repeatable; values parse as JSON with a plain-string fallback.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract clinical entities from free-text reports.
    Extract {
        /// Reports JSONL: one {"record_id", "text"} object per line.
        reports: PathBuf,
        /// Output extractions JSONL (default <output_dir>/extractions.jsonl).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Filter, deduplicate, and map extractions onto the vocabulary.
    Normalize {
        /// Extractions JSONL produced by `extract`.
        extractions: PathBuf,
        /// Output label matrix JSONL (default paths.labels).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Split the manifest into train/val/test manifests.
    Split,
    /// Pre-train the fusion model on the labeled dataset.
    Pretrain,
    /// Zero-shot evaluate a checkpoint against a prompt list.
    Eval {
        /// Model checkpoint file.
        checkpoint: PathBuf,
        /// Prompt list: one query per line.
        prompts: PathBuf,
        /// Output metrics CSV (default <output_dir>/metrics.csv).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train a linear probe on frozen encoder features.
    Probe {
        /// Model checkpoint file.
        checkpoint: PathBuf,
        /// Fraction of the training split to fit the probe on.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Output metrics CSV (default <output_dir>/probe-metrics.csv).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), cli.seed, &cli.set)?;
    match cli.command {
        Command::Extract { reports, out } => commands::cmd_extract(&config, &reports, out),
        Command::Normalize { extractions, out } => {
            commands::cmd_normalize(&config, &extractions, out)
        }
        Command::Split => commands::cmd_split(&config),
        Command::Pretrain => commands::cmd_pretrain(&config),
        Command::Eval { checkpoint, prompts, out } => {
            commands::cmd_eval(&config, &checkpoint, &prompts, out)
        }
        Command::Probe { checkpoint, fraction, out } => {
            commands::cmd_probe(&config, &checkpoint, fraction, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        // Usage mistakes are configuration errors (exit 1), leaving exit 2
        // to mean an external-client failure.
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
