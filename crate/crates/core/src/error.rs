use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the decomposition and stream kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("relative error is undefined for a zero-norm reference tensor")]
    ZeroNormReference,

    /// A factor column collapsed to zero norm. Callers typically drop the
    /// component and lower the batch rank by one.
    #[error("degenerate component {index}: zero-norm factor column")]
    DegenerateComponent { index: usize },

    #[error("singular least-squares system: {0}")]
    SingularSystem(String),

    #[error("columns are not unit-normalized: {0}")]
    NotNormalized(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics themselves, as opposed to bad
    /// parameters or unreadable files. The CLI maps these to a distinct
    /// exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::ZeroNormReference
                | Error::DegenerateComponent { .. }
                | Error::SingularSystem(_)
        )
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}
