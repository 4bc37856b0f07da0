//! Config-driven experiment runner for the `ahx` toolkit.

pub mod commands;
pub mod config;
pub mod output;

use ahx::AhxError;

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use output::{read_csv, CsvArtifact};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(AhxError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<AhxError> for CliError {
    fn from(e: AhxError) -> Self {
        match e {
            AhxError::InvalidFamily(m) => CliError::Config(format!("invalid metric family: {m}")),
            e => CliError::Core(e),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_TRAPPED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(AhxError::TrappedOrSlow { .. }) => EXIT_TRAPPED,
            _ => EXIT_FAILURE,
        }
    }
}
