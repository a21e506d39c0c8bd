use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} <= threshold {threshold:e})")]
    NotPositiveDefinite { pivot: f64, threshold: f64 },

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("unsupported PSK order {0} (expected 2, 4, 8 or 16)")]
    UnsupportedOrder(usize),

    #[error("non-strict rotation needs a threshold angle in (0, pi/2), got {0}")]
    UnsupportedModulation(f64),

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("degenerate dual point: u^T V^-1 u = {0:e}")]
    DegenerateDual(f64),

    #[error("support enumeration limited to n <= {max}, got n = {n}")]
    TooLarge { n: usize, max: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}
