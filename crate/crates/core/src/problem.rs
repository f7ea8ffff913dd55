//! Problem description: residual map, Jacobian, objective and the feasible set.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// A point is treated as feasible when it is within this distance of its
/// projection onto the set.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Relative tolerance for deciding that a bound constraint is active.
const ACTIVE_TOL: f64 = 1e-12;

/// A closed convex set with exact Euclidean projection.
///
/// All four variants also admit an exact normal cone, so the stationarity
/// residual `min_{v in N_C(x)} ||g + v||` can be computed in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// The whole space; projection is the identity.
    Unconstrained,
    /// Componentwise bounds `lower <= x <= upper`.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Euclidean ball `||x - center|| <= radius`.
    Ball { center: DVector<f64>, radius: f64 },
    /// `x >= 0` componentwise.
    NonnegativeOrthant,
}

impl ConvexSet {
    /// Box with the given bounds. Fails unless `lower <= upper` componentwise.
    pub fn bounds(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, Error> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument(
                "box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    /// The symmetric box `[-half_width, half_width]^d`.
    pub fn symmetric_box(dim: usize, half_width: f64) -> Result<Self, Error> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        Ok(ConvexSet::Box {
            lower: DVector::from_element(dim, -half_width),
            upper: DVector::from_element(dim, half_width),
        })
    }

    /// Ball with the given center and positive radius.
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self, Error> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    /// Dimension pinned by the set, if any. `Unconstrained` and the
    /// nonnegative orthant work in any dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexSet::Unconstrained | ConvexSet::NonnegativeOrthant => None,
            ConvexSet::Box { lower, .. } => Some(lower.len()),
            ConvexSet::Ball { center, .. } => Some(center.len()),
        }
    }

    fn check_dim(&self, len: usize) -> Result<(), Error> {
        match self.dim() {
            Some(d) if d != len => Err(Error::DimensionMismatch {
                context: "convex set",
                expected: d,
                actual: len,
            }),
            _ => Ok(()),
        }
    }

    /// Euclidean projection onto the set.
    ///
    /// Panics if `x` has the wrong length; use [`ResidualProblem::project`]
    /// for the checked variant.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.check_dim(x.len()).expect("projection input length");
        match self {
            ConvexSet::Unconstrained => x.clone(),
            ConvexSet::Box { lower, upper } => DVector::from_fn(x.len(), |i, _| {
                x[i].max(lower[i]).min(upper[i])
            }),
            ConvexSet::Ball { center, radius } => {
                let r = x - center;
                let dist = r.norm();
                if dist <= *radius {
                    x.clone()
                } else {
                    center + r * (*radius / dist)
                }
            }
            ConvexSet::NonnegativeOrthant => x.map(|v| v.max(0.0)),
        }
    }

    /// Whether `x` is within [`FEASIBILITY_TOL`] of the set.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.check_dim(x.len()).is_ok() && (x - self.project(x)).norm() <= FEASIBILITY_TOL
    }

    /// Exact stationarity residual `min_{v in N_C(x)} ||g + v||` at a
    /// feasible point `x`, where `N_C(x)` is the normal cone.
    ///
    /// At interior points this is `||g||`; active bounds can cancel the
    /// component of `g` pointing out of the set.
    pub fn normal_cone_distance(&self, x: &DVector<f64>, g: &DVector<f64>) -> Result<f64, Error> {
        self.check_dim(x.len())?;
        if x.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "normal cone distance",
                expected: x.len(),
                actual: g.len(),
            });
        }
        let dist = (x - self.project(x)).norm();
        if dist > FEASIBILITY_TOL {
            return Err(Error::Infeasible { distance: dist });
        }
        let value = match self {
            ConvexSet::Unconstrained => g.norm(),
            ConvexSet::Box { lower, upper } => {
                let mut sq = 0.0;
                for i in 0..x.len() {
                    let at_upper = (x[i] - upper[i]).abs() <= ACTIVE_TOL * (1.0 + upper[i].abs());
                    let at_lower = (x[i] - lower[i]).abs() <= ACTIVE_TOL * (1.0 + lower[i].abs());
                    let cancelled = (at_upper && g[i] < 0.0) || (at_lower && g[i] > 0.0);
                    if !cancelled {
                        sq += g[i] * g[i];
                    }
                }
                sq.sqrt()
            }
            ConvexSet::Ball { center, radius } => {
                let r = x - center;
                let dist = r.norm();
                let at_boundary = dist > 0.0
                    && (dist - radius).abs() <= ACTIVE_TOL * (1.0 + radius.abs()) + FEASIBILITY_TOL;
                if at_boundary {
                    let u = r / dist;
                    let s = g.dot(&u);
                    if s < 0.0 {
                        // The outward radial part of g can be cancelled by the cone.
                        (g - u * s).norm()
                    } else {
                        g.norm()
                    }
                } else {
                    g.norm()
                }
            }
            ConvexSet::NonnegativeOrthant => {
                let mut sq = 0.0;
                for i in 0..x.len() {
                    let at_lower = x[i].abs() <= ACTIVE_TOL;
                    if !(at_lower && g[i] > 0.0) {
                        sq += g[i] * g[i];
                    }
                }
                sq.sqrt()
            }
        };
        Ok(value)
    }
}

/// Evaluation counts of a [`ResidualProblem`]; the portable cost metric used
/// by the benchmark harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounts {
    /// Number of residual evaluations performed so far.
    pub residual: u64,
    /// Number of Jacobian evaluations performed so far.
    pub jacobian: u64,
}

impl EvalCounts {
    /// Combined residual + Jacobian count.
    pub fn total(&self) -> u64 {
        self.residual + self.jacobian
    }
}

type VecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A constrained nonlinear least-squares problem
/// `min 1/2 ||F(x)||^2 s.t. x in C`.
///
/// The residual and Jacobian evaluators must be deterministic and
/// side-effect-free; evaluation counters are the only state and are updated
/// atomically, so a problem may be evaluated from several threads at once.
pub struct ResidualProblem {
    dim_d: usize,
    dim_n: usize,
    residual_fn: VecFn,
    jacobian_fn: MatFn,
    feasible_set: ConvexSet,
    residual_evals: AtomicU64,
    jacobian_evals: AtomicU64,
}

impl fmt::Debug for ResidualProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResidualProblem")
            .field("dim_d", &self.dim_d)
            .field("dim_n", &self.dim_n)
            .field("feasible_set", &self.feasible_set)
            .field("counts", &self.evaluation_counts())
            .finish()
    }
}

impl ResidualProblem {
    /// Builds a problem from evaluator closures.
    pub fn new(
        dim_d: usize,
        dim_n: usize,
        residual_fn: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian_fn: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        feasible_set: ConvexSet,
    ) -> Result<Self, Error> {
        if dim_d == 0 || dim_n == 0 {
            return Err(Error::InvalidArgument(
                "problem dimensions must be positive".into(),
            ));
        }
        if let Some(set_dim) = feasible_set.dim() {
            if set_dim != dim_d {
                return Err(Error::DimensionMismatch {
                    context: "feasible set",
                    expected: dim_d,
                    actual: set_dim,
                });
            }
        }
        Ok(Self {
            dim_d,
            dim_n,
            residual_fn: Box::new(residual_fn),
            jacobian_fn: Box::new(jacobian_fn),
            feasible_set,
            residual_evals: AtomicU64::new(0),
            jacobian_evals: AtomicU64::new(0),
        })
    }

    /// Number of variables `d`.
    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    /// Number of residual components `n`.
    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    /// The feasible set `C`.
    pub fn feasible_set(&self) -> &ConvexSet {
        &self.feasible_set
    }

    /// Residual and Jacobian evaluation counts so far.
    pub fn evaluation_counts(&self) -> EvalCounts {
        EvalCounts {
            residual: self.residual_evals.load(Ordering::Relaxed),
            jacobian: self.jacobian_evals.load(Ordering::Relaxed),
        }
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<(), Error> {
        if x.len() != self.dim_d {
            return Err(Error::DimensionMismatch {
                context: "problem input",
                expected: self.dim_d,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluates `F(x)`. Counts as one residual evaluation.
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_input(x)?;
        self.residual_evals.fetch_add(1, Ordering::Relaxed);
        let out = (self.residual_fn)(x);
        if out.len() != self.dim_n {
            return Err(Error::DimensionMismatch {
                context: "residual output",
                expected: self.dim_n,
                actual: out.len(),
            });
        }
        Ok(out)
    }

    /// Evaluates the Jacobian `J(x)`. Counts as one Jacobian evaluation.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
        self.check_input(x)?;
        self.jacobian_evals.fetch_add(1, Ordering::Relaxed);
        let out = (self.jacobian_fn)(x);
        if out.nrows() != self.dim_n || out.ncols() != self.dim_d {
            return Err(Error::DimensionMismatch {
                context: "jacobian output rows*cols",
                expected: self.dim_n * self.dim_d,
                actual: out.nrows() * out.ncols(),
            });
        }
        Ok(out)
    }

    /// Objective value `f(x) = 1/2 ||F(x)||^2`. Costs one residual evaluation.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64, Error> {
        Ok(0.5 * self.residual(x)?.norm_squared())
    }

    /// Gradient `grad f(x) = J(x)^T F(x)`. Costs one residual and one
    /// Jacobian evaluation.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        let f = self.residual(x)?;
        let j = self.jacobian(x)?;
        Ok(j.transpose() * f)
    }

    /// Projection onto the feasible set, with input validation.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, Error> {
        self.check_input(x)?;
        Ok(self.feasible_set.project(x))
    }

    /// Whether `x` is within [`FEASIBILITY_TOL`] of the feasible set.
    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim_d && self.feasible_set.contains(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn identity_problem(set: ConvexSet) -> ResidualProblem {
        ResidualProblem::new(
            1,
            1,
            |x| x.clone(),
            |_| DMatrix::from_element(1, 1, 1.0),
            set,
        )
        .unwrap()
    }

    #[test]
    fn residual_identity() {
        let p = identity_problem(ConvexSet::Unconstrained);
        assert_eq!(p.residual(&dvector![3.0]).unwrap(), dvector![3.0]);
    }

    #[test]
    fn objective_half_square() {
        let p = identity_problem(ConvexSet::Unconstrained);
        assert_relative_eq!(p.objective(&dvector![1.0]).unwrap(), 0.5);
        assert_eq!(p.objective(&dvector![0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_identity() {
        let p = identity_problem(ConvexSet::Unconstrained);
        assert_eq!(p.gradient(&dvector![3.0]).unwrap(), dvector![3.0]);
        assert_eq!(p.gradient(&dvector![0.0]).unwrap(), dvector![0.0]);
    }

    #[test]
    fn counters_are_exact() {
        let p = identity_problem(ConvexSet::Unconstrained);
        p.residual(&dvector![1.0]).unwrap();
        p.objective(&dvector![2.0]).unwrap();
        p.gradient(&dvector![3.0]).unwrap();
        let counts = p.evaluation_counts();
        assert_eq!(counts.residual, 3);
        assert_eq!(counts.jacobian, 1);
    }

    #[test]
    fn concurrent_evaluation_counts_every_call() {
        let p = std::sync::Arc::new(identity_problem(ConvexSet::Unconstrained));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let p = std::sync::Arc::clone(&p);
                std::thread::spawn(move || {
                    for _ in 0..250 {
                        p.gradient(&dvector![1.0]).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let counts = p.evaluation_counts();
        assert_eq!(counts.residual, 1000);
        assert_eq!(counts.jacobian, 1000);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = identity_problem(ConvexSet::Unconstrained);
        assert!(matches!(
            p.residual(&dvector![1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn project_box() {
        let set = ConvexSet::symmetric_box(2, 1.0).unwrap();
        assert_eq!(
            set.project(&dvector![2.0, -0.5]),
            dvector![1.0, -0.5]
        );
    }

    #[test]
    fn project_unconstrained_is_identity() {
        let set = ConvexSet::Unconstrained;
        let x = dvector![5.0, -7.0];
        assert_eq!(set.project(&x), x);
    }

    #[test]
    fn project_ball_radial_scaling() {
        let set = ConvexSet::ball(dvector![0.0, 0.0], 1.0).unwrap();
        let y = set.project(&dvector![3.0, 4.0]);
        assert_relative_eq!(y[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(y[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn project_orthant() {
        let set = ConvexSet::NonnegativeOrthant;
        assert_eq!(set.project(&dvector![-1.0, 2.0]), dvector![0.0, 2.0]);
    }

    #[test]
    fn projection_is_idempotent() {
        let set = ConvexSet::ball(dvector![1.0, 1.0], 0.5).unwrap();
        let x = dvector![4.0, -3.0];
        let once = set.project(&x);
        assert_eq!(set.project(&once), once);
        assert!(set.contains(&once));
    }

    #[test]
    fn normal_cone_distance_interior() {
        let set = ConvexSet::symmetric_box(1, 1.0).unwrap();
        let d = set
            .normal_cone_distance(&dvector![0.0], &dvector![-2.0])
            .unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn normal_cone_distance_active_upper_bound() {
        let set = ConvexSet::symmetric_box(1, 1.0).unwrap();
        // At the upper bound the cone contains +v, cancelling negative g.
        let cancelled = set
            .normal_cone_distance(&dvector![1.0], &dvector![-2.0])
            .unwrap();
        assert_eq!(cancelled, 0.0);
        let not_cancelled = set
            .normal_cone_distance(&dvector![1.0], &dvector![2.0])
            .unwrap();
        assert_eq!(not_cancelled, 2.0);
    }

    #[test]
    fn normal_cone_distance_ball_boundary() {
        let set = ConvexSet::ball(dvector![0.0, 0.0], 1.0).unwrap();
        // Outward gradient component -u can be cancelled at the boundary.
        let d = set
            .normal_cone_distance(&dvector![1.0, 0.0], &dvector![-3.0, 4.0])
            .unwrap();
        assert_relative_eq!(d, 4.0, epsilon = 1e-12);
        let d2 = set
            .normal_cone_distance(&dvector![1.0, 0.0], &dvector![3.0, 4.0])
            .unwrap();
        assert_relative_eq!(d2, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_cone_distance_requires_feasibility() {
        let set = ConvexSet::symmetric_box(1, 1.0).unwrap();
        assert!(matches!(
            set.normal_cone_distance(&dvector![2.0], &dvector![1.0]),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn box_bounds_validated() {
        assert!(ConvexSet::bounds(dvector![1.0], dvector![-1.0]).is_err());
        assert!(ConvexSet::bounds(dvector![-1.0], dvector![1.0]).is_ok());
    }
}
