use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {}", format_violations(.0))]
    InvalidMdp(Vec<Violation>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular system (reciprocal condition {rcond:.3e}): {context}")]
    Singular { context: String, rcond: f64 },

    #[error("linear solve residual {residual:.3e} exceeds tolerance: {context}")]
    Residual { context: String, residual: f64 },

    #[error("rank-deficient weighted Gram matrix (reciprocal condition {rcond:.3e})")]
    RankDeficient { rcond: f64 },

    #[error("behavior policy has zero probability for action {action} in state {state}")]
    ZeroSupport { state: usize, action: usize },

    #[error("diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown estimator `{given}`; valid ids: {}", .valid.join(", "))]
    UnknownEstimator { given: String, valid: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownEstimator { .. }
            | Error::Json(_)
            | Error::Io { .. }
            | Error::InvalidMdp(_)
            | Error::InvalidArgument(_)
            | Error::Shape(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Singular { .. }
            | Error::Residual { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroSupport { .. }
            | Error::NonFinite(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
