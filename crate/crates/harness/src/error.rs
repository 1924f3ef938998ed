use std::path::Path;

use grokflow_core::flows::{FlowError, FlowFailure};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] grokflow_core::Error),
    #[error("integration failed: {0}")]
    Flow(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type HarnessResult<T> = Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl<T: grokflow_core::Real> From<FlowError<T>> for HarnessError {
    fn from(e: FlowError<T>) -> Self {
        match e.failure {
            FlowFailure::Problem(inner) => HarnessError::Core(inner),
            other => HarnessError::Flow(other.to_string()),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> HarnessResult<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> HarnessResult<T> {
        self.map_err(|e| HarnessError::io(path, e))
    }
}
