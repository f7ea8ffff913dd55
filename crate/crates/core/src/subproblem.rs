//! Inexact solvers for the constrained LM subproblem
//! `min_{x in C} m(x)`.
//!
//! Both solvers use the fixed step `1/eta` with `eta = ||J_k||^2 + lambda`,
//! the Lipschitz constant of the model gradient. [`pg_single_step`] performs
//! one projected-gradient step, which already guarantees the model decrease
//! required by the outer loop's complexity analysis. [`accelerated_pg`] runs
//! Nesterov-accelerated projected gradient with a function-value restart
//! scheme and returns the best point seen, so the single-step guarantee is
//! preserved no matter when the iteration stops.

use nalgebra::DVector;

use crate::error::Error;
use crate::model::LmModel;
use crate::problem::ConvexSet;
use crate::stationarity::{decrease_measure_with_gradient, prox_step_with_gradient};

/// When to stop the inner solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Run exactly this many accelerated iterations.
    FixedIterations(usize),
    /// Iterate until the returned point is `eps`-stationary for the
    /// subproblem, with an iteration cap of `100 d` guarding against stalls
    /// far from solutions; on hitting the cap the best point is returned
    /// without a certificate.
    StationarityTarget(f64),
    /// Drive the subproblem stationarity below `tol * (1 + ||grad m(x_k)||)`,
    /// which puts the model gap below `tol` at the scale of the subproblem.
    Exact(f64),
}

impl StoppingRule {
    /// Validates the rule's payload.
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            StoppingRule::FixedIterations(0) => Err(Error::InvalidArgument(
                "fixed iteration count must be at least 1".into(),
            )),
            StoppingRule::StationarityTarget(eps) if !(eps >= 0.0) => Err(
                Error::InvalidArgument(format!("stationarity target must be >= 0, got {eps}")),
            ),
            StoppingRule::Exact(tol) if !(tol > 0.0) => Err(Error::InvalidArgument(format!(
                "exact tolerance must be positive, got {tol}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Result of an inner solve. `model_value <= m(x_k)` always holds.
#[derive(Debug, Clone)]
pub struct InnerResult {
    /// The returned feasible point.
    pub point: DVector<f64>,
    /// Accelerated iterations performed.
    pub inner_iterations: usize,
    /// Model value at `point`.
    pub model_value: f64,
    /// Subproblem stationarity of `point`, when the stopping rule computed
    /// and met its target; absent for fixed iteration counts and when the
    /// iteration cap was hit.
    pub certified_stationarity: Option<f64>,
}

/// Exact stationarity residual of `y` for the subproblem: the normal-cone
/// distance of the model gradient at `y`.
pub fn subproblem_stationarity(
    model: &LmModel,
    set: &ConvexSet,
    y: &DVector<f64>,
) -> Result<f64, Error> {
    set.normal_cone_distance(y, &model.gradient(y)?)
}

/// One projected-gradient step on the subproblem from the base point:
/// `y = proj_C(x_k - grad m(x_k) / eta)` with `eta = ||J_k||^2 + lambda`.
///
/// The step decreases the model by at least the subproblem's decrease
/// measure at `x_k`; if rounding ever produces a non-decrease the base
/// point itself is returned.
pub fn pg_single_step(model: &LmModel, set: &ConvexSet) -> InnerResult {
    let eta = model.gradient_lipschitz();
    let grad = model.gradient_at_base();
    let candidate = prox_step_with_gradient(set, model.base_point(), &grad, eta);
    let value = model.value(&candidate).expect("model value at pg step");
    let base_value = model.value_at_base();
    if value <= base_value {
        InnerResult {
            point: candidate,
            inner_iterations: 1,
            model_value: value,
            certified_stationarity: None,
        }
    } else {
        InnerResult {
            point: model.base_point().clone(),
            inner_iterations: 1,
            model_value: base_value,
            certified_stationarity: None,
        }
    }
}

/// Accelerated projected gradient on the subproblem, starting from the base
/// point, with function-scheme restart: the momentum is reset whenever the
/// model value increases relative to the previous iterate.
///
/// Returns the best-model-value point among the base point and all iterates;
/// the first iterate is exactly [`pg_single_step`], so the single-step
/// decrease guarantee holds regardless of the stopping rule. Under
/// [`StoppingRule::StationarityTarget`] and [`StoppingRule::Exact`] the
/// iteration stops once the current iterate is simultaneously best-so-far
/// and meets the stationarity target, so the returned point carries the
/// certificate it claims.
pub fn accelerated_pg(
    model: &LmModel,
    set: &ConvexSet,
    rule: StoppingRule,
) -> Result<InnerResult, Error> {
    rule.validate()?;
    let d = model.dim();
    let eta = model.gradient_lipschitz();
    if !eta.is_finite() || !(eta > 0.0) {
        return Err(Error::Numeric(format!("invalid inner step parameter {eta}")));
    }
    let step = 1.0 / eta;

    let (cap, target) = match rule {
        StoppingRule::FixedIterations(t) => (t, None),
        StoppingRule::StationarityTarget(eps) => (100 * d, Some(eps)),
        StoppingRule::Exact(tol) => {
            let scale = 1.0 + model.gradient_at_base().norm();
            ((100 * d).max(2000), Some(tol * scale))
        }
    };

    let mut best_point = model.base_point().clone();
    let mut best_value = model.value_at_base();
    let mut previous = model.base_point().clone();
    let mut previous_value = best_value;
    let mut extrapolated = model.base_point().clone();
    let mut momentum = 1.0f64;
    let mut iterations = 0;

    for j in 1..=cap {
        let grad = model.gradient(&extrapolated)?;
        let current = set.project(&(&extrapolated - grad * step));
        let value = model.value(&current)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite model value at inner iteration {j}"
            )));
        }
        iterations = j;

        let is_best = value <= best_value;
        if is_best {
            best_point = current.clone();
            best_value = value;
        }

        if let Some(eps) = target {
            if is_best {
                let stationarity = subproblem_stationarity(model, set, &current)?;
                if stationarity <= eps {
                    return Ok(InnerResult {
                        point: current,
                        inner_iterations: iterations,
                        model_value: value,
                        certified_stationarity: Some(stationarity),
                    });
                }
            }
        }

        // Function-scheme restart: drop the momentum when the value went up.
        if value > previous_value {
            momentum = 1.0;
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let weight = (momentum - 1.0) / next_momentum;
        extrapolated = &current + (&current - &previous) * weight;
        momentum = next_momentum;
        previous = current;
        previous_value = value;
    }

    Ok(InnerResult {
        point: best_point,
        inner_iterations: iterations,
        model_value: best_value,
        certified_stationarity: None,
    })
}

/// Decrease measure of the subproblem itself at the base point, with the
/// inner step parameter `eta = ||J_k||^2 + lambda`. The accelerated solver's
/// result always decreases the model by at least this amount.
pub fn subproblem_decrease_measure(model: &LmModel, set: &ConvexSet) -> f64 {
    decrease_measure_with_gradient(
        set,
        model.base_point(),
        &model.gradient_at_base(),
        model.gradient_lipschitz(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn one_d_model(damping: f64) -> LmModel {
        LmModel::from_parts(dvector![1.0], dvector![1.0], dmatrix![1.0], damping).unwrap()
    }

    #[test]
    fn single_step_one_d_example() {
        // eta = 1 + 1 = 2, y = 1 - 1/2 = 0.5; coincides with the exact
        // minimizer here.
        let model = one_d_model(1.0);
        let result = pg_single_step(&model, &ConvexSet::Unconstrained);
        assert_relative_eq!(result.point[0], 0.5, epsilon = 1e-15);
        assert_eq!(result.inner_iterations, 1);
        assert!(result.model_value <= model.value_at_base());
    }

    #[test]
    fn single_step_fixed_point_at_subproblem_stationary() {
        // Base point with zero residual: grad m(x_k) = 0.
        let model =
            LmModel::from_parts(dvector![0.3], dvector![0.0], dmatrix![1.0], 1.0).unwrap();
        let result = pg_single_step(&model, &ConvexSet::Unconstrained);
        assert_eq!(result.point, dvector![0.3]);
    }

    #[test]
    fn single_step_respects_box() {
        let model = one_d_model(1.0);
        let set = ConvexSet::bounds(dvector![0.0], dvector![1.0]).unwrap();
        let result = pg_single_step(&model, &set);
        assert_relative_eq!(result.point[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn accelerated_exact_matches_normal_equations() {
        let model = LmModel::from_parts(
            dvector![0.5, -0.5],
            dvector![1.0, -0.3, 0.8],
            dmatrix![1.0, 0.2; -0.4, 1.5; 0.7, -0.9],
            0.6,
        )
        .unwrap();
        let exact = model.solve_exact_unconstrained().unwrap();
        let inner = accelerated_pg(&model, &ConvexSet::Unconstrained, StoppingRule::Exact(1e-12))
            .unwrap();
        assert!((inner.point - exact).norm() <= 1e-8);
        assert!(inner.certified_stationarity.is_some());
    }

    #[test]
    fn fixed_iterations_runs_exactly_that_many() {
        let model = one_d_model(1.0);
        let inner = accelerated_pg(
            &model,
            &ConvexSet::Unconstrained,
            StoppingRule::FixedIterations(10),
        )
        .unwrap();
        assert_eq!(inner.inner_iterations, 10);
        assert!(inner.certified_stationarity.is_none());
    }

    #[test]
    fn best_of_safeguard_chain() {
        let model = LmModel::from_parts(
            dvector![0.9, -0.9],
            dvector![2.0, 1.0],
            dmatrix![1.0, -0.5; 0.3, 2.0],
            0.4,
        )
        .unwrap();
        let set = ConvexSet::symmetric_box(2, 1.0).unwrap();
        let single = pg_single_step(&model, &set);
        let inner = accelerated_pg(&model, &set, StoppingRule::FixedIterations(25)).unwrap();
        assert!(inner.model_value <= single.model_value + 1e-15);
        assert!(single.model_value <= model.value_at_base() + 1e-15);
    }

    #[test]
    fn stationarity_unconstrained_is_gradient_norm() {
        let model = one_d_model(1.0);
        let y = dvector![0.25];
        let stat = subproblem_stationarity(&model, &ConvexSet::Unconstrained, &y).unwrap();
        assert_relative_eq!(stat, model.gradient(&y).unwrap().norm(), epsilon = 1e-15);
    }

    #[test]
    fn stationarity_zero_at_exact_minimizer() {
        let model = LmModel::from_parts(
            dvector![0.1, 0.4],
            dvector![0.7, -0.2],
            dmatrix![1.2, 0.1; -0.6, 0.9],
            0.5,
        )
        .unwrap();
        let y = model.solve_exact_unconstrained().unwrap();
        let stat = subproblem_stationarity(&model, &ConvexSet::Unconstrained, &y).unwrap();
        assert!(stat <= 1e-9);
    }

    #[test]
    fn stationarity_interior_of_box_is_gradient_norm() {
        let model = one_d_model(1.0);
        let set = ConvexSet::symmetric_box(1, 1.0).unwrap();
        let y = dvector![0.25];
        assert_relative_eq!(
            subproblem_stationarity(&model, &set, &y).unwrap(),
            model.gradient(&y).unwrap().norm(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn stationarity_target_certificate_is_honest() {
        let model = LmModel::from_parts(
            dvector![0.0, 0.0],
            dvector![1.0, 1.0],
            DMatrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        let set = ConvexSet::symmetric_box(2, 1.0).unwrap();
        let eps = 1e-6;
        let inner =
            accelerated_pg(&model, &set, StoppingRule::StationarityTarget(eps)).unwrap();
        let cert = inner.certified_stationarity.expect("target reachable");
        assert!(cert <= eps);
        let recomputed = subproblem_stationarity(&model, &set, &inner.point).unwrap();
        assert_relative_eq!(cert, recomputed, epsilon = 1e-12);
        // And the best-of guarantee still holds.
        let single = pg_single_step(&model, &set);
        assert!(inner.model_value <= single.model_value + 1e-15);
    }

    #[test]
    fn decrease_at_least_subproblem_measure() {
        // Assumption-style decrease: m(y) - m(x_k) <= -D for the inner
        // problem's own decrease measure D at the base point.
        let model = LmModel::from_parts(
            dvector![0.8, -0.2, 0.1],
            dvector![1.5, -0.4],
            dmatrix![0.9, 0.2, -1.1; 0.4, 1.3, 0.6],
            0.3,
        )
        .unwrap();
        let set = ConvexSet::symmetric_box(3, 1.0).unwrap();
        let d = subproblem_decrease_measure(&model, &set);
        assert!(d > 0.0);
        for rule in [
            StoppingRule::FixedIterations(1),
            StoppingRule::FixedIterations(10),
            StoppingRule::Exact(1e-10),
        ] {
            let inner = accelerated_pg(&model, &set, rule).unwrap();
            assert!(inner.model_value - model.value_at_base() <= -d + 1e-12);
        }
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(StoppingRule::FixedIterations(0).validate().is_err());
        assert!(StoppingRule::StationarityTarget(-1.0).validate().is_err());
        assert!(StoppingRule::Exact(0.0).validate().is_err());
    }
}
