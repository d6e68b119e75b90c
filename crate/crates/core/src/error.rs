use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the alignment library.
///
/// Variants fall into three families that callers (the CLI in particular)
/// map onto exit codes: parameter errors, data errors and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at ({row},{col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero vector has no direction{}", .0.map(|r| format!(" (row {r})")).unwrap_or_default())]
    ZeroVector(Option<usize>),

    #[error("constant sequence")]
    ConstantSequence,

    #[error("svd did not converge")]
    SvdNoConvergence,

    #[error("gram matrix singular; supply ridge or use pinv")]
    SingularGram,

    #[error("sgd diverged; reduce learning_rate (epoch {epoch})")]
    SgdDiverged { epoch: usize },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of a numerical procedure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SvdNoConvergence | Error::SingularGram | Error::SgdDiverged { .. }
        )
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
