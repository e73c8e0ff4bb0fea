use std::path::PathBuf;

/// Failure classes shared by every module. The CLI maps each variant onto a
/// process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller passed a value outside an operation's domain.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// Network specs, parameter sets or run configuration do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A loss, gradient or activation became NaN or infinite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed dataset files or manifests.
    #[error("ingestion error in {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Returns a numeric error when `value` is not finite.
pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(format!("{what} is not finite ({value})")))
    }
}
