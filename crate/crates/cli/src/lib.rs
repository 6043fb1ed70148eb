//! Command-line driver for ntkspectra experiments.

pub mod args;
pub mod commands;
pub mod pipeline;
pub mod report;

use anyhow::Result;

pub use args::{Cli, Command};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Bad arguments detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A numerical failure whose artifacts were still written.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(pub String);

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<ntkspectra::Error>() {
            return if e.is_io() {
                EXIT_IO
            } else if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

/// Caps the global rayon pool from `NTKSPECTRA_THREADS`.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NTKSPECTRA_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| UsageError(format!("NTKSPECTRA_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.global.out_dir)?;
    commands::dispatch(&cli.global, &cli.command)
}
