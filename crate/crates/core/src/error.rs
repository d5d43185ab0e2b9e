use alloc::string::String;

/// Errors produced by the extraction, scoring and allocation algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bundle: {field}: {reason}")]
    InvalidBundle { field: String, reason: String },
    #[error("unsupported bundle version {0} (expected 1)")]
    UnsupportedVersion(u32),
    #[error("attention score stack is empty")]
    EmptyStack,
    #[error("attention map for word {word_index} has no positive value")]
    DegenerateAttention { word_index: usize },
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("prompt has no semantic content (every word is X-type)")]
    NoSemanticContent,
    #[error("mIoU is undefined for two empty masks")]
    EmptyMasks,
    #[error("word order mismatch between matrices")]
    OrderMismatch,
    #[error("image has zero area")]
    ZeroArea,
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("unknown image id `{0}`")]
    UnknownImage(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("greedy baseline requires a score-table environment")]
    MissingTable,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: &'static str },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn bundle(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidBundle {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
