use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrslError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty data")]
    EmptyData,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("non-finite sample rejected")]
    NonFiniteSample,

    #[error("update produced non-finite weights")]
    Diverged,

    #[error("weighted Gram matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("unsupported dimension {0}; surface grids need m = 1 or m = 2")]
    UnsupportedDimension(usize),

    #[error("inapplicable regime: {0}")]
    InapplicableRegime(String),

    #[error("quadrature did not converge for {quantity}: relative change {relative_change:e} on node doubling")]
    QuadratureAccuracy {
        quantity: &'static str,
        relative_change: f64,
    },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("stability violated: Taylor denominator {denominator:e} is not positive")]
    StabilityViolation { denominator: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, KrslError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> KrslError {
    KrslError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {value}")))
    }
}
