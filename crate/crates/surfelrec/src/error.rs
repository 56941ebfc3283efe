use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// Tensor or image shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// On-disk data did not match the expected format.
    #[error("format error: {0}")]
    Format(String),
    /// A non-finite value surfaced where finiteness is required.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
