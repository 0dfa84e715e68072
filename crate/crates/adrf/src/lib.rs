//! Command-line tool, file formats and parallel Monte Carlo driver for
//! [`adrf_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod montecarlo;
pub mod parallel;

pub use error::{CliError, Result};

/// Version of the JSON and CSV layouts written by this crate.
pub const FORMAT_VERSION: u32 = 1;

/// Runs a parsed command on a pool of `threads` workers (all cores when
/// `None`).
pub fn run(cli: cli::Cli) -> Result<Vec<std::path::PathBuf>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        cli::Command::Estimate(a) => commands::estimate(a),
        cli::Command::Ci(a) => commands::ci(a),
        cli::Command::Tune(a) => commands::tune(a),
        cli::Command::Simulate(a) => commands::simulate(a),
        cli::Command::ReplicatePhi(a) => commands::replicate_phi(a),
        cli::Command::Report(a) => commands::report(a),
    })
}
