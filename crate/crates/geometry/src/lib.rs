//! Polytope calculus for tube-based controller synthesis: H/V
//! representations with double-description conversion, Minkowski sums,
//! Pontryagin differences, linear images, gauge norms, and containment
//! certificates with explicit margins.
//!
//! All operations are pure functions on immutable values; vertex caches are
//! populated at construction and never mutated, so values are safe to share
//! across threads.

mod dd;
mod error;
mod lp;
mod matpoly;
mod poly;
mod schema;

pub use dd::{FACET_TOL, RANK_TOL};
pub use error::{GeometryError, Result};
pub use lp::{maximize, solve_standard, LpOutcome, MaxOutcome};
pub use matpoly::MatrixPolytope;
pub use poly::{gauge, gauge_norm, Polytope, VERTEX_CAP};
pub use schema::PolytopeJson;
