use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A dataset, scene or config failed an invariant check.
    #[error("{}{field}: {reason}", scene.map(|s| alloc::format!("scene {s}: ")).unwrap_or_default())]
    Validation {
        scene: Option<usize>,
        field: String,
        reason: String,
    },
    /// A logarithm or division would leave its domain.
    #[error("domain error in `{param}`: {reason}")]
    Domain { param: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(scene: Option<usize>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            scene,
            field: field.into(),
            reason: reason.into(),
        }
    }
}
