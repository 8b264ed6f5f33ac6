//! Experiment harness behind the `tada` binary: configuration, data-set
//! construction, strategy execution, ablations and reporting.

pub mod ablation;
pub mod config;
pub mod experiment;
pub mod report;
pub mod sets;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: tada_core::Error,
    },

    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn stage(name: &str, source: tada_core::Error) -> HarnessError {
    HarnessError::Stage {
        stage: name.into(),
        source,
    }
}
