use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cooktf_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: parse error: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: schema error: {reason}", path.display())]
    Schema { path: PathBuf, reason: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 1 for bad inputs (files, flags, configs), 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use cooktf_core::Error as C;
        match self {
            Error::Core(C::Domain { .. } | C::NonFinite(_) | C::Shape(_)) | Error::Io { .. } => 2,
            Error::Core(_) | Error::Parse { .. } | Error::Schema { .. } | Error::Usage(_) => 1,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
