use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid rows in input ({rejected} rejected)")]
    NoValidRows { rejected: usize },

    #[error("cleaning with min_count={min_count} removed every code")]
    EverythingCleaned { min_count: usize },

    #[error("code {0:?} is not in the vocabulary")]
    UnknownCode(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("checkpoint schema version {found} does not match supported version {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("checkpoint vocabulary hash {found} does not match loaded vocabulary hash {expected}")]
    VocabularyMismatch { found: String, expected: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("invalid synthetic cohort spec: {0}")]
    InvalidSpec(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
