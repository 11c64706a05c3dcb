//! Scenario-driven front end for the `hymwall` toolkit.
//!
//! A scenario file describes the cone data, the torus geometry and bundle,
//! a path of metric perturbations and all tolerances. [`run_cone`] writes
//! the stability cone with per-class verdicts and faces, [`run_flow`] runs
//! the moment-map flow once per perturbation on the path, and [`verify`]
//! turns the written reports into a pass/fail table.

pub mod cone;
pub mod flow;
pub mod scenario;
pub mod verify;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use cone::{run_cone, ConeReport};
pub use flow::{run_flow, FlowRecord, FlowSummary};
pub use scenario::Scenario;
pub use verify::{verify, VerdictRow, VerifyOutcome};

/// Errors of the front end, each with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid scenario, unusable input or missing reports (exit 1).
    #[error("configuration error: {0}")]
    Config(String),
    /// A solver failed (exit 2).
    #[error("solver error: {0}")]
    Solver(String),
    /// A run ran out of steps or time (exit 3).
    #[error("budget exceeded: {0}")]
    Budget(String),
    /// The verdict table contains failed rows (exit 4).
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
