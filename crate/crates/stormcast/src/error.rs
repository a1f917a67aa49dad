use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by the exit-code contract of the CLI:
/// usage errors map to 1, data/format errors to 2, numeric failures to 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unrecognized format: {0}")]
    BadMagic(PathBuf),

    #[error("truncated file: {0}")]
    Truncated(PathBuf),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint version {found} not supported (expected {supported})")]
    Version { found: u32, supported: u32 },

    #[error("missing parameter blob `{0}`")]
    MissingBlob(String),

    #[error("parameter blob `{name}` has shape {found}, expected {expected}")]
    BlobShape {
        name: String,
        expected: String,
        found: String,
    },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Exit code under the CLI contract: 1 usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
