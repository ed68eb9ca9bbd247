use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate region")]
    DegenerateRegion,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coefficient field out of bounds: {0}")]
    CoefficientBounds(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("weight is not radially symmetric about the origin")]
    NonRadialWeight,

    #[error("ball touches the zero phase")]
    BallTouchesZeroPhase,

    #[error("too few radii for an exponent fit: {0} (need at least 4)")]
    TooFewRadii(usize),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
