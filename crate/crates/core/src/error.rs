use thiserror::Error;

use crate::geometry::TaskSpace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("task space mismatch: expected {expected}, got {got}")]
    SpaceMismatch { expected: TaskSpace, got: TaskSpace },
    #[error("{what} is not supported in {space}")]
    UnsupportedSpace {
        space: TaskSpace,
        what: &'static str,
    },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("sampling aborted: {0}")]
    SamplingAborted(String),
    #[error("QP input error: {0}")]
    QpInput(String),
    #[error("degenerate convex hull: {0}")]
    DegenerateHull(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used by the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::SpaceMismatch { .. } => "space-mismatch",
            Error::UnsupportedSpace { .. } => "unsupported-space",
            Error::InvalidPose(_) => "invalid-pose",
            Error::InvalidChain(_) => "invalid-chain",
            Error::InvalidConfig(_) => "invalid-config",
            Error::InvalidData(_) => "invalid-data",
            Error::SamplingAborted(_) => "sampling-aborted",
            Error::QpInput(_) => "qp-input",
            Error::DegenerateHull(_) => "degenerate-hull",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "schema",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
