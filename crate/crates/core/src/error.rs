use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Reasons an embedding buffer fails to decode or encode.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatErrorKind {
    #[error("bad magic, expected \"MEVT1\"")]
    BadMagic,
    #[error("truncated header: need 17 bytes, have {actual}")]
    TruncatedHeader { actual: u64 },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value")]
    NonFinite,
    #[error("dim must be positive")]
    ZeroDim,
    #[error("rows must be positive")]
    ZeroRows,
    #[error("rows x dim overflows")]
    Overflow,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("embedding format error at byte {offset}: {kind}")]
    Format { offset: u64, kind: FormatErrorKind },
    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the file system rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
