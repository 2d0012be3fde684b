//! Command-line front end: configuration, cached sweeps over the solvers
//! of `glbulk-core`, CSV tables and the invariant suite.

pub mod cache;
pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use clap::Parser;

pub use config::{Cli, Command, Flags, RunConfig};

/// Version of the record and CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{0} verification check(s) failed")]
    Verify(usize),
    #[error("cache: {0}")]
    Cache(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Cache(_) | CliError::Io(_) | CliError::Csv(_) => 4,
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            std::process::exit(0)
        }
        _ => CliError::Config(e.to_string()),
    })?;
    let cfg = RunConfig::resolve(cli.command, cli.flags)?;
    run(&cfg)
}

/// Runs a resolved configuration on a pool of `cfg.jobs` threads.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| commands::dispatch(cfg))
}
