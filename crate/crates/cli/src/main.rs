//! `bmp`: spectra, moments, limit variances, simulations and verification
//! suites for branching Markov chains, driven by JSON experiment configs.
//!
//! Exit status: 0 success, 1 configuration error, 2 mathematical or
//! statistical failure, 3 I/O error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Math(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Math(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Math(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<bmp_core::Error> for CliError {
    fn from(e: bmp_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Math(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "bmp", version, about = "Spectral limit theory and simulation for branching Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of replicates; overrides the config.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads for ensembles. Never changes results.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues, Jordan blocks and biorthogonal eigenfunctions.
    Spectrum(Common),
    /// Mean and variance sweep over the configured times.
    Moments(Common),
    /// Spectral profile and limit variances of every configured function.
    Limits(Common),
    /// Seeded ensemble with checkpoint dumps.
    Simulate(Common),
    /// Run the configured verification suite.
    Verify(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum(c) => commands::spectrum(c),
        Command::Moments(c) => commands::moments(c),
        Command::Limits(c) => commands::limits(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Verify(c) => commands::verify(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
