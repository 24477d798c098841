//! Offline/online pipeline around `gpdeim-core`: configuration, artifact
//! storage and the `snapshots`, `build`, `run` and `report` steps.

pub mod config;
pub mod container;
pub mod pipeline;

pub use config::{Mode, RunConfig};

/// Failures of a pipeline step, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("missing or unusable artifact: {0}")]
    Artifact(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Core errors caused by bad inputs count as validation errors.
    pub fn from_core(e: gpdeim_core::Error) -> Self {
        use gpdeim_core::Error as E;
        match e {
            E::RankDeficient { .. } | E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::IndexOutOfRange { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }

    /// Process exit status: 1 for bad inputs, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<gpdeim_core::Error> for CliError {
    fn from(e: gpdeim_core::Error) -> Self {
        Self::from_core(e)
    }
}
