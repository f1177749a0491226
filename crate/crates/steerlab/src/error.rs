use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/layer shape disagreement.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller-supplied value is out of range or otherwise unusable.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Gradient was requested for a tensor that is not on the graph.
    #[error("untracked tensor: {0}")]
    Untracked(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed text input (manifest line, CSV row, ...).
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Input failed semantic validation (missing files, bad ranges, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Binary file format violation (magic, version, truncation, shape table).
    #[error("format error: {0}")]
    Format(String),

    /// Statistics undefined for this input (e.g. constant ground truth).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Command invoked incorrectly (missing checkpoint, empty run dir, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Training diverged; carries epoch/batch diagnostics.
    #[error("training aborted: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/validation, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Argument(_)
            | Error::Usage(_)
            | Error::Validation(_)
            | Error::Parse { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
