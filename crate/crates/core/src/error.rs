use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subdivision: {0}")]
    InvalidSubdivision(String),

    #[error("invalid hat function: require u < v < w, got ({u}, {v}, {w})")]
    InvalidHat { u: f64, v: f64, w: f64 },

    #[error("knot {t} coincides with an existing knot (min gap {min_gap})")]
    KnotCollision { t: f64, min_gap: f64 },

    #[error("knot {0} lies outside the open interval (0, 1)")]
    KnotOutOfRange(f64),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("unsupported request: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("input row {row}, column {col} = {value} lies outside [0, 1]")]
    InputOutOfRange { row: usize, col: usize, value: f64 },

    #[error(
        "cholesky failed for {what} after jitter escalation to {jitter:.3e} \
         (size {size}, diag range [{min_diag:.3e}, {max_diag:.3e}])"
    )]
    Cholesky {
        what: &'static str,
        size: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("quadratic program infeasible: constraint {constraint} cannot be satisfied")]
    Infeasible { constraint: usize },

    #[error(
        "quadratic program did not converge in {iterations} iterations \
         (max violation {max_violation:.3e})"
    )]
    QpNoConvergence {
        iterations: usize,
        max_violation: f64,
    },

    #[error("no strictly feasible starting point found for the sampler")]
    NoInteriorPoint,

    #[error("trajectory exceeded {0} wall bounces")]
    TooManyBounces(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
