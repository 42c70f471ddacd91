use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("quadrature box covers only {mass:.8} of the prior mass (need >= {required})")]
    Coverage { mass: f64, required: f64 },

    #[error("non-finite value in the {head} head: {detail}")]
    Numeric { head: String, detail: String },

    /// Every batch of an epoch produced a non-finite loss. Carries the
    /// weights from the last epoch that finished with a finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence {
        epoch: usize,
        detail: String,
        last_finite: Option<Box<crate::net::NetworkWeights>>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: cannot parse {cell:?} as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
