//! The frozen Levenberg-Marquardt subproblem model.
//!
//! At a linearization point `x_k` with residual `F_k`, Jacobian `J_k` and
//! damping `lambda > 0`, the model is
//!
//! ```text
//! m(x) = 1/2 ||F_k + J_k (x - x_k)||^2 + lambda/2 ||x - x_k||^2.
//! ```
//!
//! The model touches the objective at the base point (`m(x_k) = f(x_k)`,
//! `grad m(x_k) = grad f(x_k)`) and is strictly convex. Whether it also
//! upper-bounds `f` at a candidate step is exactly the acceptance test of
//! the majorization-based LM method, see [`majorization_holds`].

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::problem::ResidualProblem;

/// Relative slack for the majorization acceptance test; exact `f <= m` can
/// fail by rounding at equality (`y = x_k`).
const MAJORIZATION_SLACK: f64 = 1e-12;

/// Power-iteration limits for [`spectral_norm`].
const POWER_MAX_ITER: usize = 500;
const POWER_RAYLEIGH_TOL: f64 = 1e-12;

/// Largest singular value of a dense matrix, by power iteration on
/// `J^T J v`, to about 1e-6 relative accuracy.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> f64 {
    let d = matrix.ncols();
    if d == 0 || matrix.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start with uneven entries so it is not orthogonal to the
    // top singular vector for the matrices seen in practice.
    let mut v = DVector::from_fn(d, |i, _| 1.0 + 1e-3 * (i % 13) as f64);
    v /= v.norm();
    let mut rayleigh = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = matrix.transpose() * (matrix * &v);
        let new_rayleigh = v.dot(&w);
        let norm_w = w.norm();
        if norm_w == 0.0 {
            return 0.0;
        }
        v = w / norm_w;
        if (new_rayleigh - rayleigh).abs() <= POWER_RAYLEIGH_TOL * new_rayleigh.max(1.0) {
            rayleigh = new_rayleigh;
            break;
        }
        rayleigh = new_rayleigh;
    }
    rayleigh.max(0.0).sqrt()
}

/// Frozen LM subproblem at a base point: `(x_k, F_k, J_k, lambda)`.
///
/// Immutable after construction and cheap to re-damp via [`LmModel::with_damping`],
/// which is what the outer loop does on unsuccessful iterations.
#[derive(Debug, Clone)]
pub struct LmModel {
    base_point: DVector<f64>,
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    damping: f64,
    jacobian_norm: f64,
}

impl LmModel {
    /// Builds the model by evaluating `F` and `J` at `x_k` on `problem`.
    pub fn new(
        problem: &ResidualProblem,
        x_k: &DVector<f64>,
        damping: f64,
    ) -> Result<Self, Error> {
        if !problem.is_feasible(x_k) {
            let dist = (x_k - problem.feasible_set().project(x_k)).norm();
            return Err(Error::Infeasible { distance: dist });
        }
        let residual = problem.residual(x_k)?;
        let jacobian = problem.jacobian(x_k)?;
        Self::from_parts(x_k.clone(), residual, jacobian, damping)
    }

    /// Builds the model from already-evaluated `F(x_k)` and `J(x_k)`.
    /// The caller is responsible for their consistency with the problem;
    /// shapes and the damping sign are checked here.
    pub fn from_parts(
        base_point: DVector<f64>,
        residual: DVector<f64>,
        jacobian: DMatrix<f64>,
        damping: f64,
    ) -> Result<Self, Error> {
        if !(damping > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must be positive, got {damping}"
            )));
        }
        if jacobian.nrows() != residual.len() || jacobian.ncols() != base_point.len() {
            return Err(Error::DimensionMismatch {
                context: "model jacobian shape",
                expected: residual.len() * base_point.len(),
                actual: jacobian.nrows() * jacobian.ncols(),
            });
        }
        let jacobian_norm = spectral_norm(&jacobian);
        if !jacobian_norm.is_finite() {
            return Err(Error::Numeric("non-finite jacobian norm".into()));
        }
        Ok(Self {
            base_point,
            residual,
            jacobian,
            damping,
            jacobian_norm,
        })
    }

    /// Same base data with a different damping parameter.
    pub fn with_damping(mut self, damping: f64) -> Result<Self, Error> {
        if !(damping > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must be positive, got {damping}"
            )));
        }
        self.damping = damping;
        Ok(self)
    }

    pub fn base_point(&self) -> &DVector<f64> {
        &self.base_point
    }

    /// `F_k`.
    pub fn residual_at_base(&self) -> &DVector<f64> {
        &self.residual
    }

    /// `J_k`.
    pub fn jacobian_at_base(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// Cached spectral norm `||J_k||`.
    pub fn jacobian_norm(&self) -> f64 {
        self.jacobian_norm
    }

    /// Lipschitz constant of the model gradient, `||J_k||^2 + lambda`; the
    /// fixed step parameter used by the projected-gradient inner solvers.
    pub fn gradient_lipschitz(&self) -> f64 {
        self.jacobian_norm * self.jacobian_norm + self.damping
    }

    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), Error> {
        if x.len() != self.base_point.len() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.base_point.len(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Model value `m(x)`. Requires no problem evaluations.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64, Error> {
        self.check_dim(x)?;
        let step = x - &self.base_point;
        let linearized = &self.residual + &self.jacobian * &step;
        Ok(0.5 * linearized.norm_squared() + 0.5 * self.damping * step.norm_squared())
    }

    /// Model value at the base point, `m(x_k) = f(x_k)`.
    pub fn value_at_base(&self) -> f64 {
        0.5 * self.residual.norm_squared()
    }

    /// Model gradient `J_k^T (F_k + J_k (x - x_k)) + lambda (x - x_k)`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_dim(x)?;
        let step = x - &self.base_point;
        let linearized = &self.residual + &self.jacobian * &step;
        Ok(self.jacobian.transpose() * linearized + step * self.damping)
    }

    /// Model gradient at the base point, `J_k^T F_k = grad f(x_k)`.
    pub fn gradient_at_base(&self) -> DVector<f64> {
        self.jacobian.transpose() * &self.residual
    }

    /// Exact unconstrained minimizer of the model: `x_k + u` with
    /// `(J_k^T J_k + lambda I) u = -J_k^T F_k`, solved by Cholesky
    /// factorization with one step of iterative refinement.
    pub fn solve_exact_unconstrained(&self) -> Result<DVector<f64>, Error> {
        let d = self.dim();
        let mut normal = self.jacobian.transpose() * &self.jacobian;
        for i in 0..d {
            normal[(i, i)] += self.damping;
        }
        let rhs = -self.gradient_at_base();
        let chol = nalgebra::Cholesky::new(normal.clone())
            .ok_or_else(|| Error::Numeric("Cholesky factorization failed".into()))?;
        let mut u = chol.solve(&rhs);
        let tol = 1e-10 * (1.0 + rhs.norm());
        let residual = &normal * &u - &rhs;
        if residual.norm() > tol {
            u -= chol.solve(&residual);
            let refined = &normal * &u - &rhs;
            if !refined.norm().is_finite() {
                return Err(Error::Numeric("normal equations solve diverged".into()));
            }
        }
        Ok(&self.base_point + u)
    }
}

/// Acceptance test of the majorization-based LM method: does the model
/// upper-bound the objective at `y`?
///
/// Returns `f(y) <= m(y) + 1e-12 (1 + m(y))`. Costs exactly one residual
/// evaluation.
pub fn majorization_holds(
    problem: &ResidualProblem,
    model: &LmModel,
    y: &DVector<f64>,
) -> Result<bool, Error> {
    if !problem.is_feasible(y) {
        let dist = (y - problem.feasible_set().project(y)).norm();
        return Err(Error::Infeasible { distance: dist });
    }
    let objective = problem.objective(y)?;
    let model_value = model.value(y)?;
    if !objective.is_finite() || !model_value.is_finite() {
        return Err(Error::Numeric(
            "non-finite value in majorization test".into(),
        ));
    }
    Ok(objective <= model_value + MAJORIZATION_SLACK * (1.0 + model_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ConvexSet;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    /// 1-D model with x_k = 1, F_k = [1], J_k = [1].
    fn one_d_model(damping: f64) -> LmModel {
        LmModel::from_parts(
            dvector![1.0],
            dvector![1.0],
            dmatrix![1.0],
            damping,
        )
        .unwrap()
    }

    #[test]
    fn value_at_base_equals_objective() {
        let m = one_d_model(1.0);
        assert_eq!(m.value(&dvector![1.0]).unwrap(), m.value_at_base());
        assert_eq!(m.value_at_base(), 0.5);
    }

    #[test]
    fn value_one_d_example() {
        let m = one_d_model(1.0);
        // 1/2 (1 - 1)^2 + 1/2 * 1 = 0.5
        assert_relative_eq!(m.value(&dvector![0.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn damping_increase_shifts_value_quadratically() {
        let x = dvector![-0.3];
        let m1 = one_d_model(1.0);
        let m2 = one_d_model(2.5);
        let step_sq = (x[0] - 1.0f64).powi(2);
        assert_relative_eq!(
            m2.value(&x).unwrap() - m1.value(&x).unwrap(),
            0.5 * 1.5 * step_sq,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gradient_at_base_is_problem_gradient() {
        let m = one_d_model(1.0);
        assert_eq!(m.gradient(&dvector![1.0]).unwrap(), dvector![1.0]);
        assert_eq!(m.gradient_at_base(), dvector![1.0]);
    }

    #[test]
    fn gradient_one_d_example() {
        let m = one_d_model(1.0);
        // J (F + J (x - x_k)) + lambda (x - x_k) = 1*(1-1) + 1*(-1) = -1
        assert_eq!(m.gradient(&dvector![0.0]).unwrap(), dvector![-1.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = LmModel::from_parts(
            dvector![0.4, -0.2, 0.9],
            dvector![1.0, -2.0],
            dmatrix![0.5, -1.0, 2.0; 1.5, 0.3, -0.7],
            0.8,
        )
        .unwrap();
        let x = dvector![0.1, 0.2, -0.5];
        let grad = model.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (model.value(&plus).unwrap() - model.value(&minus).unwrap()) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn spectral_norm_identity() {
        let eye = DMatrix::<f64>::identity(4, 4);
        assert_relative_eq!(spectral_norm(&eye), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_norm_diagonal_with_sign() {
        let m = dmatrix![3.0, 0.0; 0.0, -4.0];
        assert_relative_eq!(spectral_norm(&m), 4.0, max_relative = 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        // Deterministic pseudo-random 20x10 matrix.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let m = DMatrix::from_fn(20, 10, |_, _| next());
        let svd_max = m.clone().svd(false, false).singular_values[0];
        assert_relative_eq!(spectral_norm(&m), svd_max, max_relative = 1e-6);
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        let m = DMatrix::<f64>::zeros(3, 2);
        assert_eq!(spectral_norm(&m), 0.0);
    }

    #[test]
    fn exact_unconstrained_one_d() {
        let m = one_d_model(1.0);
        // (1 + 1) u = -1 -> u = -1/2, result 0.5.
        let y = m.solve_exact_unconstrained().unwrap();
        assert_relative_eq!(y[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn exact_unconstrained_huge_damping_stays_at_base() {
        let m = one_d_model(1e12);
        let y = m.solve_exact_unconstrained().unwrap();
        assert!((y[0] - 1.0).abs() <= 1e-11);
    }

    #[test]
    fn exact_unconstrained_first_order_optimality() {
        let model = LmModel::from_parts(
            dvector![0.2, -0.4],
            dvector![1.0, 2.0, -0.5],
            dmatrix![1.0, 0.5; -0.3, 2.0; 0.8, 0.8],
            0.7,
        )
        .unwrap();
        let y = model.solve_exact_unconstrained().unwrap();
        assert!(model.gradient(&y).unwrap().norm() <= 1e-9);
    }

    #[test]
    fn majorization_at_base_point() {
        let set = ConvexSet::Unconstrained;
        let problem = ResidualProblem::new(
            1,
            1,
            |x: &DVector<f64>| x.clone(),
            |_| dmatrix![1.0],
            set,
        )
        .unwrap();
        let model = LmModel::new(&problem, &dvector![1.0], 1.0).unwrap();
        assert!(majorization_holds(&problem, &model, &dvector![1.0]).unwrap());
    }

    #[test]
    fn majorization_exact_for_affine_residual() {
        // F(x) = A x + b: the linearization is exact, so the model majorizes
        // f for every positive damping.
        let a = dmatrix![1.0, -2.0; 0.5, 0.3; -1.5, 1.0];
        let b = dvector![0.2, -0.7, 1.0];
        let problem = {
            let (a1, b1) = (a.clone(), b.clone());
            let a2 = a.clone();
            ResidualProblem::new(
                2,
                3,
                move |x: &DVector<f64>| &a1 * x + &b1,
                move |_| a2.clone(),
                ConvexSet::Unconstrained,
            )
            .unwrap()
        };
        let model = LmModel::new(&problem, &dvector![0.4, -0.6], 0.05).unwrap();
        for y in [
            model.solve_exact_unconstrained().unwrap(),
            dvector![0.4, -0.6],
            dvector![0.3, -0.5],
        ] {
            assert!(majorization_holds(&problem, &model, &y).unwrap());
        }
    }

    #[test]
    fn majorization_fails_for_too_small_damping() {
        // F(x) = x^2 at x_k = 1 with lambda = 0.01: the exact model
        // minimizer is ~0.5012 and f there exceeds the model value.
        let problem = ResidualProblem::new(
            1,
            1,
            |x: &DVector<f64>| dvector![x[0] * x[0]],
            |x: &DVector<f64>| dmatrix![2.0 * x[0]],
            ConvexSet::Unconstrained,
        )
        .unwrap();
        let model = LmModel::new(&problem, &dvector![1.0], 0.01).unwrap();
        let y = model.solve_exact_unconstrained().unwrap();
        assert_relative_eq!(y[0], 1.0 - 2.0 / 4.01, epsilon = 1e-6);
        assert!(!majorization_holds(&problem, &model, &y).unwrap());
    }

    #[test]
    fn nonpositive_damping_rejected() {
        assert!(LmModel::from_parts(dvector![0.0], dvector![1.0], dmatrix![1.0], 0.0).is_err());
    }
}
