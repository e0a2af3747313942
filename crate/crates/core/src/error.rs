use thiserror::Error;

/// Errors raised by every layer of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site {site} has local dimension {dim}, expected a qubit")]
    NonQubitSite { site: usize, dim: usize },

    #[error("channel index {index} out of range ({count} channels)")]
    InvalidChannel { index: usize, count: usize },

    #[error("numerical nullspace of the Liouvillian is empty")]
    EmptyNullspace,

    #[error("steady state is degenerate ({count} fixed points); pick one explicitly")]
    DegenerateSteadyState { count: usize },

    #[error("adaptive integrator step size underflow at t = {time}")]
    StepSizeUnderflow { time: f64 },

    #[error("hierarchy needs orders 0..{needed}, only {available} supplied")]
    MissingOrders { needed: usize, available: usize },

    #[error("order {order} did not converge (residual {residual:e})")]
    NonConvergent { order: usize, residual: f64 },

    #[error("cumulant order {order} exceeds supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("first cumulant vanishes (quiet phase); Fano factor undefined")]
    QuietPhase,

    #[error("Liouville dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("dominant eigenvalue has imaginary part {imag:e}")]
    ComplexDominantEigenvalue { imag: f64 },

    #[error("drift matrix is not stable: {0}")]
    Unstable(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("Newton iteration failed after {iterations} steps (residual {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },

    #[error("trajectory norm underflow at t = {time}")]
    NormUnderflow { time: f64 },

    #[error("initial state not normalized (norm^2 = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("batch of {size} trajectories is below the minimum of {min}")]
    UndersizedBatch { size: usize, min: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
