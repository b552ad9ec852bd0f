//! Command-line front end for the ladder detector.
//!
//! Every subcommand resolves its settings from an optional `--config` JSON
//! file (a bare config or a previous run's manifest) overridden by flags,
//! does its work, and writes a [`manifest::RunManifest`] with the resolved
//! config next to its outputs.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;

use clap::{Parser, Subcommand};
use ladder_core::{Error, ErrorKind};

pub use commands::{EvalArgs, RenderArgs, RunArgs, SynthArgs, TrainArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable with the worker thread count.
pub const THREADS_ENV: &str = "LADDER_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ladder",
    version,
    about = "Iterative chain detection: synthesize, train, run, evaluate, render"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic chain dataset with train/val/test lists.
    Synth(SynthArgs),
    /// Train a corner regressor on a dataset directory.
    Train(TrainArgs),
    /// Run the ladder on one image or on a dataset split.
    Run(RunArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Draw detections (and optionally truth) over an image.
    Render(RenderArgs),
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn configure_threads() -> ladder_core::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
    }
    // Fails only if a pool already exists, e.g. when called twice in-process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn dispatch(command: Command) -> ladder_core::Result<()> {
    configure_threads()?;
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => commands::render(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            // messages already embed their sources
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
