//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite values in {context}")]
    NonFinite { context: String },

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("label {label} has a single class; need both positive and negative examples")]
    SingleClass { label: usize },

    #[error("all positions are masked")]
    AllMasked,

    #[error("attention weights sum to {sum}, not a distribution")]
    NotNormalized { sum: f64 },

    #[error("rank correlation undefined: {side} input is constant")]
    ConstantRanks { side: &'static str },

    #[error("vocabulary mismatch: expected hash {expected}, got {got}")]
    VocabMismatch { expected: String, got: String },

    #[error("unsupported checkpoint format version {0}")]
    FormatVersion(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
