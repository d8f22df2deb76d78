//! Tube-based robust data-driven predictive control.
//!
//! From a single noisy input-state trajectory of an unknown LTI plant, the
//! offline pipeline identifies a polytopic set of data-consistent models,
//! certifies a stabilizing gain and an induced-gain bound, synthesizes
//! invariant tubes and tightened constraints, and the online layer solves a
//! strictly convex QP over Hankel-parametrized plans each step. A seeded
//! simulation harness audits the feasibility, constraint-satisfaction and
//! stability guarantees in closed loop.

pub mod consistency;
pub mod data;
pub mod controller;
pub mod coverage;
pub mod error;
pub mod pipeline;
pub mod simulation;
pub mod synthesis;

pub use error::{Error, Result};
