use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no admissible point inside {0}")]
    EmptyDomain(String),

    #[error("point {point} is outside {context}")]
    DomainMismatch { point: Complex64, context: String },

    #[error("Gram matrix is not positive definite even with relative ridge {ridge:e}")]
    SingularGram { ridge: f64 },

    #[error("degenerate anchor {point}: K(t,t) = {diagonal:e}")]
    DegenerateAnchor { point: Complex64, diagonal: f64 },

    #[error("argument {point} is outside the oracle domain (radius {radius})")]
    OutOfDomain { point: Complex64, radius: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("transition amplitude {0} exceeds 1 beyond rounding slack")]
    AmplitudeOutOfRange(f64),
}
