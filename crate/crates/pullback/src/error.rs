use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Unreadable or corrupted content.
    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },
    #[error("{}: expected schema {expected:?}, found {found:?}", path.display())]
    Schema {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error(transparent)]
    Core(#[from] pullback_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn malformed(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Malformed { .. } => "file",
            Error::Schema { .. } => "schema",
            Error::Core(pullback_core::Error::DimensionMismatch { .. }) => "dimension",
            Error::Core(pullback_core::Error::Overflow { .. })
            | Error::Core(pullback_core::Error::NonFiniteLoss { .. })
            | Error::Core(pullback_core::Error::NonFiniteParameters { .. })
            | Error::Core(pullback_core::Error::SingularMatrix) => "numeric",
            Error::Core(_) => "invalid",
            Error::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "file" => 2,
            "schema" => 3,
            "dimension" => 4,
            _ => 1,
        }
    }
}
