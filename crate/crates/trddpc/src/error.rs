use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] trddpc_geometry::GeometryError),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("hankel depth {depth} exceeds data length {len}")]
    DepthTooLarge { depth: usize, len: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("invalid simplex coefficient: {0}")]
    InvalidSimplex(String),

    #[error("consistency intersection empty at gamma={gamma}; smallest feasible gamma ≈ {restore}")]
    EmptyIntersection { gamma: f64, restore: f64 },

    #[error("gain synthesis infeasible: {0}")]
    SdpInfeasible(String),

    #[error("fixed-point iteration did not converge after {iters} iterations (bracket [{lo}, {hi}])")]
    NoConvergence { iters: usize, lo: f64, hi: f64 },

    #[error("set iteration hit the cap of {cap} steps without certifying invariance")]
    NoTermination { cap: usize },

    #[error("tightened set empty: {which}; max noise scale preserving nonemptiness ≈ {max_scale}")]
    TightenedSetEmpty { which: String, max_scale: f64 },

    #[error("terminal design infeasible: no deviation-set scale in [0, 1] satisfies the terminal conditions")]
    TerminalDesignInfeasible,

    #[error("terminal margin nonpositive after {retries} retries")]
    MarginNonpositive { retries: usize },

    #[error("certified decay rate λ = {lambda} ≥ 1; comparison constants undefined")]
    LambdaGeOne { lambda: f64 },

    #[error("optimal control problem infeasible at the current measurement")]
    OcpInfeasible,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("data collection retry cap exceeded ({cap} attempts): {reason}")]
    RetryCapExceeded { cap: usize, reason: String },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("closed loop infeasible at step {step} (should not happen with a certified design)")]
    StepInfeasible { step: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
