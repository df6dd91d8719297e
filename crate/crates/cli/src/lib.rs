//! Batch commands behind the `hjb` binary: condition checks, solving,
//! Monte Carlo verification and parameter sweeps, all driven by one JSON
//! [`RunConfig`] and writing JSON, CSV and binary field files.
//!
//! Exit codes: 0 success, 1 quantitative failure, 2 usage or configuration error.

mod commands;
pub mod config;

pub use commands::{
    cmd_check, cmd_solve, cmd_sweep, cmd_verify, solve, verify, Comparison, Outcome, PdeValues, Solved,
    SolveSummary, VerifyReport,
};
pub use config::{RunConfig, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs.
    #[error("{0}")]
    Usage(String),
    /// The computation itself failed (divergence, too many bad paths, ...).
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<hjb_core::Error> for CliError {
    fn from(e: hjb_core::Error) -> Self {
        use hjb_core::Error as E;
        match e {
            E::Config(_) | E::Cfl { .. } | E::InvalidModel(_) | E::Format(_) | E::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}
