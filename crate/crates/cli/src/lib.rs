//! Experiment harness for volume-sorted prediction sets: config parsing,
//! seeded multi-split runs of VSPS and the Naïve QR baseline, report and
//! plot-data emission.

pub mod config;
pub mod experiment;
pub mod report;
pub mod selftest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("seed {seed} failed: {message}")]
    Seed { seed: u64, message: String },

    #[error(transparent)]
    Core(#[from] vsps_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for runtime/training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(vsps_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}
