use thiserror::Error;

/// Errors produced by the articukit algorithms and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("joint limit exceeded for part {part_id}: {value} outside [{lo}, {hi}]")]
    JointLimit { part_id: u32, value: f64, lo: f64, hi: f64 },

    #[error("insufficient support: {support} points, need at least {required}")]
    InsufficientSupport { support: usize, required: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("contact lost: {0}")]
    ContactLost(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
