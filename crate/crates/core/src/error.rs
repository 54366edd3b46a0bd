use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum FqrError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },

    #[error("{what}: non-numeric cell {value:?} at row {row}, column {col}")]
    NotNumeric {
        what: String,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{what}: non-finite value at row {row}, column {col}")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-increasing grid at index {index}")]
    NonIncreasingGrid { index: usize },

    #[error("grid needs at least 2 points, got {0}")]
    GridTooShort(usize),

    #[error(
        "design matrix is rank deficient: sigma_min/sigma_max = {ratio:.3e} (column {column} is nearly dependent)"
    )]
    RankDeficient { ratio: f64, column: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "solver did not converge at location {location} after {iterations} iterations (objective {objective}, gap {gap:.3e})"
    )]
    NonConvergence {
        location: usize,
        iterations: usize,
        objective: f64,
        gap: f64,
        beta: Vec<f64>,
    },

    #[error("degenerate MCMC chain at location {location}: acceptance rate {acceptance:.4}")]
    DegenerateChain { location: usize, acceptance: f64 },

    #[error("non-positive marginal variance {value:e} at location {location}")]
    NonPositiveVariance { location: usize, value: f64 },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("query point {value} outside domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("unsupported spline order {0}; supported orders are 1 and 2")]
    UnsupportedOrder(usize),

    #[error("unknown scenario {name:?}; valid scenarios: {valid}")]
    UnknownScenario { name: String, valid: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{} location(s) failed: {}", .0.len(), format_failures(.0))]
    LocationFailures(Vec<(usize, String)>),
}

fn format_failures(list: &[(usize, String)]) -> String {
    list.iter()
        .map(|(l, m)| format!("[{l}] {m}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, FqrError>;
