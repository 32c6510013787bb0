//! Command-line front end.
//!
//! Exit codes: `0` when the command ran (reports may record failures as
//! data), `1` for configuration errors, `2` when a stability precheck refuses
//! the run.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use config::{ExperimentConfig, SCHEMA};

#[derive(Debug, Parser)]
#[command(
    name = "gibbslab",
    version,
    about = "Mean-field Gibbs ensembles: sampling, free-energy minimization and LDP checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Metropolis sampler for every N in [run].
    Sample(CommonArgs),
    /// Minimize the macroscopic free energy for every beta in [solver].
    Minimize(CommonArgs),
    /// Run the verification suite named in [verify].
    Verify(CommonArgs),
    /// Tabulate solver (and optionally sampler) results across [solver].betas.
    ScanBeta(CommonArgs),
    /// Print the JSON schema of the config file.
    Schema,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output directory; defaults to [output].dir, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Stability(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            if code == 2 {
                eprintln!("stability refusal: {e}");
            } else {
                eprintln!("error: {e}");
            }
            code
        }
    }
}
