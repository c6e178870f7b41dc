//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model id {0:?} (builtin models: toy:v1, toy:v1@<seed>)")]
    UnknownModel(String),

    #[error("context of {needed} tokens exceeds the model window of {window} tokens")]
    WindowOverflow { needed: usize, window: usize },

    #[error("invalid decode config: {0}")]
    InvalidDecodeConfig(String),

    #[error("position {position} is outside the prompt span {span_start}..{span_end}")]
    PositionOutsidePrompt {
        position: usize,
        span_start: usize,
        span_end: usize,
    },

    #[error("invalid indicator: {0}")]
    InvalidIndicator(String),

    #[error("logit/target arity mismatch: {logits} logit vectors for {targets} targets")]
    ArityMismatch { logits: usize, targets: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("k = {k} exceeds vocab size {vocab}")]
    KTooLarge { k: usize, vocab: usize },

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {have} records, but the split spec needs {need}")]
    InsufficientRecords {
        path: String,
        have: usize,
        need: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("run directory error: {0}")]
    RunDir(String),

    #[error("config hash mismatch: stored {stored}, recomputed {actual}")]
    ConfigHashMismatch { stored: String, actual: String },

    #[error("reports disagree on task/split: {0}")]
    ReportMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, files, or settings; nothing ran.
    Config,
    /// The model could not be resolved or loaded.
    Model,
    /// A failure after work started.
    Runtime,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::UnknownModel(_) => ErrorClass::Model,
            Error::InvalidDecodeConfig(_)
            | Error::EmptyDataset
            | Error::KTooLarge { .. }
            | Error::MalformedRecord { .. }
            | Error::InsufficientRecords { .. }
            | Error::InvalidConfig(_)
            | Error::ConfigHashMismatch { .. }
            | Error::ReportMismatch(_) => ErrorClass::Config,
            _ => ErrorClass::Runtime,
        }
    }
}
