//! Projected-gradient operator, gradient mapping, decrease measure, and
//! stationarity certificates for the constrained problem.
//!
//! For step parameter `eta > 0` the projected-gradient operator is
//!
//! ```text
//! P_eta(x) = proj_C(x - grad f(x) / eta),
//! ```
//!
//! the gradient mapping is `G_eta(x) = eta (x - P_eta(x))`, and the decrease
//! measure `D_eta(x)` is the negated optimal value of the linearized step
//! problem `min_{y in C} <grad f(x), y - x> + eta/2 ||y - x||^2`, whose
//! minimizer is exactly `P_eta(x)`. `G_eta` vanishes exactly at stationary
//! points, and `P_eta(x)` is a `2||G_eta(x)||`-stationary point whenever
//! `eta` dominates the gradient's Lipschitz modulus on the relevant set.

use nalgebra::DVector;

use crate::error::Error;
use crate::problem::{ConvexSet, ResidualProblem};

/// Certificate that `point` is an `certified_epsilon`-stationary point,
/// assuming the `eta` used dominates the gradient Lipschitz modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    /// The certified point, `P_eta(x)`; always feasible.
    pub point: DVector<f64>,
    /// Certified stationarity level, `2 ||G_eta(x)||`.
    pub certified_epsilon: f64,
    /// The step parameter the certificate was computed with.
    pub eta: f64,
}

fn check_inputs(problem: &ResidualProblem, x: &DVector<f64>, eta: f64) -> Result<(), Error> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if x.len() != problem.dim_d() {
        return Err(Error::DimensionMismatch {
            context: "stationarity input",
            expected: problem.dim_d(),
            actual: x.len(),
        });
    }
    if !problem.is_feasible(x) {
        let dist = (x - problem.feasible_set().project(x)).norm();
        return Err(Error::Infeasible { distance: dist });
    }
    Ok(())
}

/// `P_eta(x)` computed from an already-evaluated gradient. Used by the
/// solvers to avoid re-evaluating `F` and `J`.
pub fn prox_step_with_gradient(
    set: &ConvexSet,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    set.project(&(x - grad / eta))
}

/// `G_eta(x)` computed from an already-evaluated gradient. Without
/// constraints the mapping reduces to the gradient itself, exactly.
pub fn gradient_mapping_with_gradient(
    set: &ConvexSet,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    if matches!(set, ConvexSet::Unconstrained) {
        return grad.clone();
    }
    (x - prox_step_with_gradient(set, x, grad, eta)) * eta
}

/// `D_eta(x)` computed from an already-evaluated gradient, through the
/// closed-form minimizer `y = P_eta(x)`.
pub fn decrease_measure_with_gradient(
    set: &ConvexSet,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    eta: f64,
) -> f64 {
    let y = prox_step_with_gradient(set, x, grad, eta);
    let step = &y - x;
    let value = -(grad.dot(&step) + 0.5 * eta * step.norm_squared());
    // Nonnegative in exact arithmetic; clamp rounding noise.
    value.max(0.0)
}

/// Projected-gradient step `P_eta(x)`. Costs one residual and one Jacobian
/// evaluation.
pub fn prox_step(
    problem: &ResidualProblem,
    x: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>, Error> {
    check_inputs(problem, x, eta)?;
    let grad = problem.gradient(x)?;
    Ok(prox_step_with_gradient(problem.feasible_set(), x, &grad, eta))
}

/// Gradient mapping `G_eta(x) = eta (x - P_eta(x))`. Costs one residual and
/// one Jacobian evaluation. Equals `grad f(x)` exactly when the set is
/// `Unconstrained`.
pub fn gradient_mapping(
    problem: &ResidualProblem,
    x: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>, Error> {
    check_inputs(problem, x, eta)?;
    let grad = problem.gradient(x)?;
    Ok(gradient_mapping_with_gradient(
        problem.feasible_set(),
        x,
        &grad,
        eta,
    ))
}

/// Decrease measure `D_eta(x) >= 0`. Costs one residual and one Jacobian
/// evaluation.
pub fn decrease_measure(
    problem: &ResidualProblem,
    x: &DVector<f64>,
    eta: f64,
) -> Result<f64, Error> {
    check_inputs(problem, x, eta)?;
    let grad = problem.gradient(x)?;
    Ok(decrease_measure_with_gradient(
        problem.feasible_set(),
        x,
        &grad,
        eta,
    ))
}

/// Builds the stationarity certificate at `x`: the point `P_eta(x)` together
/// with the level `2 ||G_eta(x)||`.
///
/// The certificate is meaningful when `eta` dominates the (generally
/// unknown) gradient Lipschitz modulus; the `eta` used is recorded so the
/// caller can interpret it.
pub fn certify(
    problem: &ResidualProblem,
    x: &DVector<f64>,
    eta: f64,
) -> Result<StationarityReport, Error> {
    check_inputs(problem, x, eta)?;
    let grad = problem.gradient(x)?;
    Ok(certify_with_gradient(problem.feasible_set(), x, &grad, eta))
}

/// Certificate from an already-evaluated gradient.
pub fn certify_with_gradient(
    set: &ConvexSet,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    eta: f64,
) -> StationarityReport {
    let point = prox_step_with_gradient(set, x, grad, eta);
    let certified_epsilon = 2.0 * eta * (x - &point).norm();
    StationarityReport {
        point,
        certified_epsilon,
        eta,
    }
}
