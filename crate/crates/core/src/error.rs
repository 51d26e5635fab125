use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in this crate.
///
/// The split matters for callers: `NonFinite` and `Solver` mean a numeric
/// procedure failed at runtime, everything else points at bad input or a
/// misconfigured call.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("word not in vocabulary: {0:?}")]
    UnknownWord(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("non-finite value during {context} at step {step}")]
    NonFinite { context: String, step: u64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("model data malformed: {0}")]
    ModelFormat(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    /// True when the failure happened inside an optimization loop rather
    /// than while validating inputs. The command line maps this to a
    /// different exit code.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Solver(_) | Error::DegenerateData(_)
        )
    }
}
