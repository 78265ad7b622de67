use thiserror::Error;

/// Error taxonomy shared by the whole toolkit.
///
/// The split mirrors the process exit codes of the command-line frontend:
/// usage and format problems exit 2, numeric failures exit 3, and failed
/// verification checks exit 1 (the latter are not errors but outcomes, so
/// they do not appear here).
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed incompatible shapes or out-of-range arguments.
    #[error("usage: {0}")]
    Usage(String),
    /// A file or document did not match its expected format.
    #[error("format: {0}")]
    Format(String),
    /// A computation produced NaN/Inf or otherwise left the representable range.
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Prefixes the message with where the failure happened, preserving the
    /// error kind (I/O errors become format errors, same exit code).
    pub fn with_context(self, context: &str) -> Self {
        match self {
            Error::Usage(m) => Error::Usage(format!("{context}: {m}")),
            Error::Format(m) => Error::Format(format!("{context}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{context}: {m}")),
            Error::Io(e) => Error::Format(format!("{context}: io: {e}")),
        }
    }

    /// Process exit code the frontend maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Format(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
