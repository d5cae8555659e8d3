use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("rule for {0} has no patterns")]
    EmptyRule(String),
    #[error("{0:?} is reserved and cannot be used as a license id")]
    ReservedLicenseId(String),
    #[error("bad pattern in rule for {license_id}: {source}")]
    BadPattern {
        license_id: String,
        #[source]
        source: regex::Error,
    },
    #[error("matrix verdicts must be compatible or conflict, got {0}")]
    BadVerdict(String),
    #[error("theta must be in (0, 1], got {0}")]
    Theta(f64),
    #[error("min-tokens must be at least 1")]
    MinTokens,
    #[error("at least one granularity is required")]
    NoGranularity,
    #[error("unknown granularity {0:?}")]
    UnknownGranularity(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read source {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },
    #[error("stackexchange dump truncated after {rows} rows: {reason}")]
    Truncated {
        rows: u64,
        reason: String,
        /// Corpus built from the rows completed before the failure.
        partial: Box<crate::corpus::Corpus>,
    },
    #[error("corpus file line {line}: {source}")]
    CorpusLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("corpus file: {0}")]
    CorpusInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("index was built with theta {index} but detection requested theta {requested}")]
    ThetaMismatch { index: f64, requested: f64 },
    #[error("index was built with {index:?} denominator but detection requested {requested:?}")]
    DenominatorMismatch {
        index: crate::engine::Denominator,
        requested: crate::engine::Denominator,
    },
    #[error("index was built with min_tokens {index} but detection requested {requested}")]
    MinTokensMismatch { index: u64, requested: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache entry: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report {0} not found")]
    NotFound(String),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("at least one attribution pattern is required")]
    NoPatterns,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
