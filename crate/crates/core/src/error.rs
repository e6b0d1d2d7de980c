use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} at row {row} is not +1 or -1 (required by {loss})")]
    InvalidLabel {
        row: usize,
        label: f64,
        loss: &'static str,
    },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires explicit features but the dataset is in Gram mode")]
    FeaturesUnavailable,

    #[error("solver did not converge in {epochs} epochs (gap {gap:e}, target {target:e})")]
    NotConverged { epochs: usize, gap: f64, target: f64 },

    #[error("dual objective is -inf: conjugate infinite at sample {0}")]
    InfiniteConjugate(usize),

    #[error("duality gap {gap:e} is negative beyond rounding (primal {primal:e})")]
    NegativeGap { gap: f64, primal: f64 },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("kernel file: {0}")]
    KernelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
