use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structural problems found while decoding `.ivl` or `.ivparams` bytes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload: need {needed} bytes, {available} available")]
    TruncatedPayload { needed: usize, available: usize },

    #[error("inconsistent file: {0}")]
    Inconsistent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    #[error(transparent)]
    Core(#[from] invres_core::Error),

    #[error("config file {} not found", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit status: 2 for invocation and configuration mistakes, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::ConfigNotFound(_) | Error::Config { .. } | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
