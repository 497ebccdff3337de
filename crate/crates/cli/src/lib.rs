//! Command-line front end: synthesize data, train, segment, evaluate and
//! self-verify. Exit codes: 0 success, 1 verification failure, 2 input or
//! configuration error, 3 training abort.

pub mod commands;
pub mod error;
pub mod output;
pub mod settings;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::{eval, segment, synth, train, verify};
pub use crate::error::{CliError, Result};
use crate::settings::{Overrides, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "sa-assess", version, about = "Situational-awareness assessment from video features")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic scenario.
    Synth(synth::SynthArgs),
    /// Train the graph autoencoder and the SA classifier.
    Train(train::TrainArgs),
    /// Segment videos into events from SA trajectories.
    Segment(segment::SegmentArgs),
    /// Evaluate a trained model on labelled data.
    Eval(eval::EvalArgs),
    /// Run gradient checks and metric oracles.
    Verify(verify::VerifyArgs),
}

/// Executes a parsed command line; `config_file` is the `key = value` layer
/// between defaults and flags.
pub fn execute(cli: &Cli, config_file: Option<&Path>) -> Result<()> {
    let flags = &cli.overrides;
    match &cli.command {
        Command::Synth(a) => synth::run(a, flags, config_file),
        Command::Train(a) => train::run(a, flags, config_file),
        Command::Segment(a) => segment::run(a, flags, config_file),
        Command::Eval(a) => eval::run(a, flags, config_file),
        Command::Verify(a) => verify::run(a, flags, config_file),
    }
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let config_file = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match execute(&cli, config_file.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
