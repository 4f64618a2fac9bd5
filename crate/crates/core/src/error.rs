use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("vocab size {requested} too small; minimum is {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("corpus supports at most {available} pieces, {requested} requested")]
    VocabExhausted { requested: usize, available: usize },
    #[error("token id {0} out of range")]
    TokenOutOfRange(u32),
    #[error("span corruption needs {0} spans but only 100 sentinels exist")]
    SentinelExhaustion(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint content hash mismatch")]
    CheckpointHash,
    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),
    #[error("checkpoint malformed: {0}")]
    CheckpointFormat(String),
    #[error("vocab hash mismatch: checkpoint {checkpoint}, data {data}")]
    VocabMismatch { checkpoint: String, data: String },
    #[error("length mismatch: {0}")]
    Alignment(String),
    #[error("metric not applicable: {0}")]
    NotApplicable(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
