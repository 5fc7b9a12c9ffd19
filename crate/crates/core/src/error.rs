use thiserror::Error;

/// Unified error type for the whole crate.
///
/// Variants are grouped by how the command-line layer reports them:
/// usage and configuration problems exit with 1, data and format problems
/// with 2, numeric problems (NaN/Inf, diverged training) with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or rank mismatch between tensors, or an operation whose
    /// output would have a non-positive dimension.
    #[error("dimension error: {0}")]
    Dim(String),

    /// A forward operation produced a non-finite value, or an input
    /// violated a numeric-domain precondition.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Caller misuse of the library or command line (bad flag, backward
    /// from a non-scalar, unknown subcommand).
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration value that parsed but is out of range or
    /// inconsistent with other values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A malformed external file (checkpoint, PGM, manifest, report,
    /// config file). `offset` is the byte position where parsing failed
    /// when it is meaningful.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Dataset-level problems: too few samples, missing images, a metric
    /// undefined on the given data.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Dim(_) | Error::Format { .. } | Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) | Error::Divergence(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
