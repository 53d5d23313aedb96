//! Sweep configs in, learning-curve tables out; plus the cross-module check suite.

pub mod checks;
pub mod config;
pub mod sweep;

pub use config::{Axis, Mode, SweepConfig};
pub use sweep::{run, RunOptions, RunSummary};

/// Prefix of the environment variables mirroring the command-line flags.
pub const ENV_PREFIX: &str = "CURVES_";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] dsm_curves::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}
