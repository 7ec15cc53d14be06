use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurvError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("metric is not positive definite at {point:?}")]
    SingularMetric { point: Vec<f64> },
    #[error("order m = {m} outside [1, {max}] for dimension n = {n}")]
    BadOrder { m: usize, n: usize, max: usize },
    #[error("bad model description: {0}")]
    BadSpec(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("weight is not positive at {point:?} (value {value})")]
    NonpositiveWeight { point: Vec<f64>, value: f64 },
    #[error("hypersurface is not critical: residual sup-norm {residual:e}")]
    NotCritical { residual: f64 },
    #[error("iteration limit reached after {iterations} iterations (best residual {best_residual:e})")]
    IterationLimit { iterations: usize, best_residual: f64 },
    #[error("slicing is incomplete: {0}")]
    IncompleteSlicing(String),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("top-slice second fundamental form is not traceless (trace {trace:e})")]
    NotTraceless { trace: f64 },
    #[error("operation requires m = n - 1, got m = {m}, n = {n}")]
    WrongOrder { m: usize, n: usize },
    #[error("dimension condition n(m-2) <= m^2-2 fails for (n, m) = ({n}, {m})")]
    InfeasiblePair { n: usize, m: usize },
    #[error("tensor must be expressed in an orthonormal basis")]
    NotOrthonormal,
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, CurvError>;

impl From<std::io::Error> for CurvError {
    fn from(e: std::io::Error) -> Self {
        CurvError::Io(e.to_string())
    }
}
