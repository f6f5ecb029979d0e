//! `pimforce`: drive the contact/force pipeline from the shell.
//!
//! Subcommands mirror the pipeline stages: `synth` emits raw sensor CSVs,
//! `preprocess` turns them into a tensor dataset, `train` fits a model,
//! `eval` scores a checkpoint, `infer` runs one on new recordings.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, bad
//! `PIMFORCE_THREADS`), 2 for data errors (unreadable files, malformed
//! CSV, shape mismatches).

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pimforce", version, about = "Pressure-from-muscle-and-pose pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording session (sEMG, glove pose, pressure).
    Synth(commands::synth::SynthArgs),
    /// Convert raw stream CSVs into an aligned tensor dataset.
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Train a model on a preprocessed dataset and write a checkpoint.
    Train(commands::train::TrainArgs),
    /// Score a checkpoint against a preprocessed dataset.
    Eval(commands::eval::EvalArgs),
    /// Run a checkpoint on raw sEMG plus pose recordings.
    Infer(commands::infer::InferArgs),
}

/// Reads `PIMFORCE_THREADS` and caps the global rayon pool. Unset or empty
/// means library default. Returns an error string for unparsable values.
fn configure_threads() -> Result<(), String> {
    let raw = match std::env::var("PIMFORCE_THREADS") {
        Ok(v) => v,
        Err(_) => return Ok(()),
    };
    if raw.trim().is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("PIMFORCE_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("PIMFORCE_THREADS must be at least 1".into());
    }
    // Build failure here means a pool already exists (e.g. under a test
    // harness); the existing pool wins and that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let kind = err.kind();
            // clap renders help/version through the error path; they are
            // successful outcomes, not usage mistakes.
            let _ = err.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }

    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Preprocess(args) => commands::preprocess::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Infer(args) => commands::infer::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
