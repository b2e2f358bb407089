//! Solvers and estimate auditors for degenerate p-Laplacian evolution
//! problems with nonlinear Neumann flux conditions on box domains.
//!
//! The crate integrates three related problems driven by the coordinate-wise
//! operator sum_i D_i(|D_i u|^{p-2} D_i u), p > 2:
//!
//! - a parabolic problem (implicit Euler with Newton),
//! - a hyperbolic problem (explicit leapfrog with a stability guard),
//! - the equivalent integro-differential first-order form,
//!
//! and evaluates along every computed trajectory the energy functionals,
//! coercivity pairings and Gronwall-type bounds that the solution theory
//! predicts, reporting pass/fail margins for each.

// Comparisons are often written as `!(x > y)` on purpose: the negated
// form rejects NaN where `x <= y` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auditor;
pub mod config;
pub mod expr;
pub mod galerkin;
pub mod grid;
pub mod hyperbolic;
pub mod parabolic;
pub mod plap;
pub mod problem;
pub mod runner;

pub use grid::{FaceField, Field, Grid, GridError};
pub use plap::{FluxField, OperatorParams};
pub use problem::{Mode, ProblemSpec, SolverConfig, SolverError, Source, Trajectory};
