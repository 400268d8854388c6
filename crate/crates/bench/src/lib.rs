//! Experiment runner for comparing extragradient sliding with extragradient.
//!
//! An experiment is described by a TOML file (see [`config`]). Running it
//! writes one CSV per (solver, seed) with per-iteration residuals and
//! cumulative oracle counts, plus a `summary.json` with the oracle calls
//! needed to reach a grid of residual thresholds.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ExperimentOutcome};
pub use report::compare_report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Solver(#[from] vi_sliding::Error),
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for numeric
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Solver(vi_sliding::Error::Config(_)) => 2,
            BenchError::Numeric(_) | BenchError::Solver(vi_sliding::Error::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}

/// Thresholds, as fractions of the initial residual, used in summaries and reports.
pub const THRESHOLDS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
