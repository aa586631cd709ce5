use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario file: {0}")]
    ConfigParse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario id {0} (expected 1..=6 and a matching [scenarios] row)")]
    UnknownScenario(u32),
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("malformed dataset at line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    InsufficientData(String),
    #[error("bridge input arity mismatch: expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("bridge basis term `{term}` is not valid for a {kind} bridge")]
    InvalidBasis { term: String, kind: &'static str },
    #[error("normal equations remain indefinite at the penalty cap (lambda = {lambda:e})")]
    Singular { lambda: f64 },
    #[error("gradient descent did not converge in {iterations} iterations (gradient inf-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("zero-variance covariates: bandwidth undefined")]
    ZeroVariance,
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Pipeline stage the error arose in, if recorded.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
