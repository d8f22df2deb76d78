use thiserror::Error;

/// Errors surfaced by the polytope calculus.
#[derive(Debug, Clone, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("set is empty where a nonempty set is required")]
    InfeasibleSet,

    #[error("set is unbounded in the queried direction")]
    UnboundedInDirection,

    #[error("set is unbounded; vertex enumeration requires a bounded set")]
    UnboundedSet,

    #[error("polytope does not contain the origin in its interior")]
    OriginNotInterior,

    #[error("empty input list")]
    EmptyInput,

    #[error("vertex enumeration exceeded the cap of {cap} vertices")]
    VertexCapExceeded { cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
