use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("weight parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },

    #[error("unsupported form degree {degree} for n = {n}")]
    UnsupportedDegree { degree: usize, n: usize },

    #[error("non-positive quadrature weight at node {node}")]
    QuadratureWeight { node: usize },

    #[error(
        "linear solve did not converge after {iterations} iterations \
         (relative residual {residual:.3e}{})",
        hint.map(|h| format!(", smallest Ritz value estimate {h:.3e}")).unwrap_or_default()
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        hint: Option<f64>,
    },

    #[error("eigensolver stopped after {iterations} iterations with {converged}/{wanted} pairs converged (worst residual {worst_residual:.3e})")]
    EigenNoConvergence {
        iterations: usize,
        converged: usize,
        wanted: usize,
        worst_residual: f64,
    },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
