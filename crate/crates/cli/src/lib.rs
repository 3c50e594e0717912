//! Batch front end over the `ludvision` library: registration, signature
//! export, training, evaluation, inference and overlay rendering.
//!
//! Every subcommand is a thin composition of library calls plus file
//! plumbing; the numerics live in the library so they stay testable without
//! a process boundary.

pub mod commands;
pub mod config;
pub mod dataset;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ludvision",
    version,
    about = "Multispectral ludwigia mapping: align, analyze, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a five-band capture directory into one stacked LMS file
    Align(commands::align::AlignArgs),
    /// Export per-class spectral signatures of a labeled stack as CSV
    Signatures(commands::signatures::SignaturesArgs),
    /// Train a segmentation model from a run-configuration file
    Train(commands::train::TrainArgs),
    /// Score predictions against ground truth into a grouped CSV report
    Eval(commands::eval::EvalArgs),
    /// Segment one stack with a trained model
    Predict(commands::predict::PredictArgs),
    /// Render a mask over the RGB composite of a stack
    Overlay(commands::overlay::OverlayArgs),
}

/// Runs the tool on an argument vector and returns the process exit code:
/// 0 on success, 1 on a runtime failure (message on stderr), 2 on a usage
/// error (usage text on stderr).
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests render on stdout and succeed;
            // anything else is a usage error.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match init_threads().and_then(|()| dispatch(cli)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Align(args) => commands::align::run(&args),
        Command::Signatures(args) => commands::signatures::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Predict(args) => commands::predict::run(&args),
        Command::Overlay(args) => commands::overlay::run(&args),
    }
}

/// Applies the LUDVISION_THREADS cap to the rayon pool. Zero or unset means
/// one worker per logical CPU.
fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("LUDVISION_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("LUDVISION_THREADS must be an integer, got {raw:?}"))?;
        // A second initialization in one process keeps the first pool; that
        // only happens in in-process tests, never in the binary.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}
