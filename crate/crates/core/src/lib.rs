//! Skew-symmetric SBP-SAT solver for one-dimensional hyperbolic initial
//! boundary value problems, plus a harness that measures how perturbations in
//! forcing, boundary and initial data propagate into the solution.

pub mod config;
pub mod error;
pub mod experiment;
pub mod sbp;
pub mod solver;
pub mod systems;
pub mod uncertainty;

pub use error::{Error, Result};
