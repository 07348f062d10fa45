//! `zsdst`: train, predict, evaluate and ablate the choice-fusion reader.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 runtime or numerical error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use zsdst::Ablation;

use crate::commands::EvaluateArgs;
use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] zsdst::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use zsdst::Error::*;
        match self {
            CliError::Usage(_) | CliError::Core(Config(_)) => 1,
            CliError::Core(
                Io { .. } | Parse { .. } | Validation(_) | Misaligned(_) | Checkpoint(_) | Budget { .. },
            ) => 2,
            CliError::Core(Shape(_) | NonFinite(_) | Contract(_) | Diverged { .. }) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "zsdst", version, about = "Zero-shot dialogue state tracking with a choice-fusion reader")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the reader on a QA corpus; writes checkpoint, report and manifest.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.ablation`: kld_and_fuse, kld_only, fuse_only or neither.
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict dialogue states for every turn.
    Predict {
        /// `model.json` written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        /// Only query slots of this domain.
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold dialogue states.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Gold dialogues.
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        /// Score only this domain's slots over dialogues involving it.
        #[arg(long)]
        domain: Option<String>,
        /// Add the error taxonomy over sampled dialogues.
        #[arg(long)]
        analyze: bool,
        /// Dialogues sampled for the error taxonomy.
        #[arg(long, default_value_t = 50)]
        sample: usize,
        /// Seed for dialogue sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate KLD+Fuse, KLD and Fuse with a shared seed.
    Ablate {
        /// TOML run configuration; its ablation field is ignored.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; one subdirectory per setting.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus, ontology, dialogues and config.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 800)]
        qa_records: usize,
        #[arg(long, default_value_t = 40)]
        dialogues: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a run's recorded input digests still match.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, seed, ablation, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::train(&config, cfg, seed, ablation, &out)
        }
        Command::Predict { checkpoint, dialogues, ontology, domain, out } => {
            commands::predict(&checkpoint, &dialogues, &ontology, domain.as_deref(), &out)
        }
        Command::Evaluate { predictions, dialogues, ontology, domain, analyze, sample, seed, out } => {
            commands::evaluate_cmd(EvaluateArgs {
                predictions: &predictions,
                dialogues: &dialogues,
                ontology: &ontology,
                domain: domain.as_deref(),
                analyze,
                sample,
                seed,
                out: &out,
            })
        }
        Command::Ablate { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::ablate(&config, cfg, seed, &out)
        }
        Command::Synth { seed, qa_records, dialogues, out } => commands::synth(&out, seed, qa_records, dialogues),
        Command::Verify { manifest } => commands::verify(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
