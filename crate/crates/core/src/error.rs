use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An invalid numeric parameter (eps, learning rate, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Bad input data such as an out-of-vocabulary token id.
    #[error("input error: {0}")]
    Input(String),

    /// API misuse: non-scalar backward root, empty dataset, bad index.
    #[error("usage error: {0}")]
    Usage(String),

    /// Inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be decoded. `field` names the offending entry.
    #[error("format error in {path}: field `{field}`: {detail}")]
    Format {
        path: PathBuf,
        field: String,
        detail: String,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    /// An explanation method declined to run (e.g. attention flow on a long input).
    #[error("method refused: {0}")]
    Refused(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        field: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }
}
