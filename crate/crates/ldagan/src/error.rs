use thiserror::Error;

/// Unified error type for the library. Numerical routines fail loudly on
/// domain violations rather than propagating NaN.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or parameter. The message names
    /// the sub-step (discriminator / generator / alpha) that diverged.
    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv parse error at line {line}: {detail}")]
    Csv { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

/// Prefixes an io error with the path it concerns, so "No such file or
/// directory" names the file the caller actually passed.
pub(crate) fn annotate_io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> std::io::Error + '_ {
    move |e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}
