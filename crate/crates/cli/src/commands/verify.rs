use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use sa_core::verify::{run_verify, VerifyOptions};
use sa_numerics::fault::{inject, Fault};

use crate::error::{CliError, Result};
use crate::output::OutputDir;
use crate::settings::{Overrides, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    SigmoidBackward,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Fewer seeds and oracle instances; for smoke tests.
    #[arg(long)]
    pub quick: bool,
    /// Also write `verify.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corrupts a backward pass to prove the suite catches it.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<InjectedFault>,
}

/// The suite takes no pipeline settings; they are still validated so a bad
/// config file or flag fails here as it would in every other command.
pub fn run(args: &VerifyArgs, flags: &Overrides, config_file: Option<&Path>) -> Result<()> {
    Settings::layered(None, config_file, flags)?;
    let opts = if args.quick {
        VerifyOptions {
            seeds: 2,
            full_model_seeds: 1,
            metric_instances: 100,
            ..VerifyOptions::default()
        }
    } else {
        VerifyOptions::default()
    };
    // the fault is thread-local and the suite runs on this thread
    let _guard = args.inject_fault.map(|f| match f {
        InjectedFault::SigmoidBackward => inject(Fault::SigmoidBackwardSignFlip),
    });
    let report = run_verify(&opts);
    print!("{}", report.render());
    if let Some(dir) = &args.out {
        OutputDir::create(dir)?.write_json("verify.json", &report)?;
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("failing checks: {}", failed.join(", "))))
    }
}
