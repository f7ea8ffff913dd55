//! Solvers for nonlinear least squares over simple convex sets.
//!
//! This crate implements a Levenberg-Marquardt method whose damping parameter
//! is driven by a majorization test: a candidate step is accepted only when
//! the damped Gauss-Newton model is verified to upper-bound the objective at
//! the candidate, and the damping estimate is backtracked otherwise. The
//! subproblems may be solved inexactly by an accelerated projected gradient
//! method, and projected-gradient / residual-test LM baselines are provided
//! for comparison.
//!
//! The problem solved is
//!
//! ```text
//! min  f(x) = 1/2 ||F(x)||^2   subject to  x in C,
//! ```
//!
//! where `F: R^d -> R^n` is continuously differentiable and `C` is a closed
//! convex set supporting Euclidean projection ([`ConvexSet`]).
//!
//! Entry points:
//!
//! * [`ResidualProblem`] describes `F`, its Jacobian, and `C`.
//! * [`lm_solve`] runs the majorization-based LM method.
//! * [`pg_baseline_solve`] and [`hybrid_lm_solve`] run the baselines.
//! * [`certify`] turns a point into a stationarity certificate.

// Parameter checks are written as `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod model;
pub mod problem;
pub mod solver;
pub mod stationarity;
pub mod subproblem;

pub use error::Error;
pub use model::{majorization_holds, spectral_norm, LmModel};
pub use problem::{ConvexSet, EvalCounts, ResidualProblem, FEASIBILITY_TOL};
pub use solver::{
    hybrid_lm_solve, lm_solve, pg_baseline_solve, HybridParams, IterationRecord, SolveError,
    SolveReport, SolverConfig, Status,
};
pub use stationarity::{
    certify, decrease_measure, gradient_mapping, prox_step, StationarityReport,
};
pub use subproblem::{accelerated_pg, pg_single_step, subproblem_stationarity, InnerResult, StoppingRule};
