use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across scoring, search and study management.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("metric `{0}` has no declared range")]
    MissingRange(String),
    #[error("study has no completed trials")]
    EmptyStudy,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("expert weights for group `{0}` do not cover every metric in the group")]
    PartialExpertWeights(String),
    #[error("degenerate strategy: {0}")]
    DegenerateStrategy(String),
    #[error("invalid grid resolution for `{0}`")]
    InvalidResolution(String),
    #[error("parameter `{0}` has a domain that cannot be encoded in the unit cube")]
    UnsupportedDomain(String),
    #[error("evaluator unavailable: {0}")]
    EvaluatorUnavailable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("corrupt study record in {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("resume diverged from the persisted history: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
