use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: lo ({lo}) must be strictly below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("too few basis functions: {n_basis} requested for degree {degree}")]
    TooFewBasis { n_basis: usize, degree: usize },

    #[error("invalid knot set: {0}")]
    InvalidKnots(String),

    #[error("point {value} at index {index} lies outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("series for unit {unit} has {len} observations, needs more than max lag {max_lag}")]
    SeriesTooShort { unit: String, len: usize, max_lag: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("adjacency graph: {0}")]
    Graph(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Newton iterations did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
