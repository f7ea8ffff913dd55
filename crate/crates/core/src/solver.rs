//! Outer solvers: the majorization-based LM method, a projected-gradient
//! baseline, and a residual-test LM baseline with projected-gradient
//! fallback.
//!
//! All three share the same termination rule: stop as soon as
//! `||G_eta(x_k)|| <= tol` for the reporting parameter `eta`, or when the
//! residual vanishes, and report `P_eta(x_k)` with its stationarity
//! certificate. Every trial is recorded in a trace, and the problem's
//! evaluation counters are the portable cost metric: each outer iteration
//! evaluates `F` and `J` once at the current point, each acceptance test
//! costs one extra residual evaluation, and rejected trials never
//! re-evaluate the Jacobian.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error as ThisError;

use crate::error::Error;
use crate::model::{majorization_holds, LmModel};
use crate::problem::ResidualProblem;
use crate::stationarity::{
    certify_with_gradient, gradient_mapping_with_gradient, prox_step_with_gradient,
    StationarityReport,
};
use crate::subproblem::{accelerated_pg, StoppingRule};

/// Residual norms at or below this level terminate the run: the damping
/// `mu_k = M ||F_k||` degenerates there and the point solves the equation
/// to working precision.
const ZERO_RESIDUAL_TOL: f64 = 1e-14;

/// Relative slack in the projected-gradient acceptance test.
const PG_ACCEPT_SLACK: f64 = 1e-12;

/// Floor for the backtracked estimates, preventing underflow to zero on
/// very long runs with the shrink factor enabled.
const ESTIMATE_FLOOR: f64 = 1e-100;

/// Maximum number of step halvings in the baseline's line search.
const ARMIJO_MAX_HALVINGS: usize = 60;

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// The stationarity tolerance (or a vanishing residual) was reached.
    Converged,
    /// The outer iteration budget was exhausted.
    MaxOuterReached,
    /// The wall-clock budget was exhausted.
    Timeout,
}

/// Solver parameters. Defaults follow the benchmark protocol:
/// `M0 = 1`, `alpha = 2`, `beta = 0.9`, `eta = 1e6`, `tol = 1e-3`, ten
/// inner iterations.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initial estimate `M_0 > 0` of the Jacobian Lipschitz modulus.
    pub m0: f64,
    /// Backtracking growth factor `alpha > 1` applied on rejected trials.
    pub alpha: f64,
    /// Shrink factor in `(0, 1]` applied after accepted steps; `1` disables
    /// the shrink.
    pub beta: f64,
    /// Step parameter of the reporting gradient mapping `G_eta`.
    pub eta_report: f64,
    /// Stop once `||G_eta(x_k)|| <= tol`.
    pub tol: f64,
    /// Inner stopping rule. For [`StoppingRule::StationarityTarget`] the
    /// per-iteration target is `rho * mu_k * ||F_k||`; the variant's payload
    /// in the config is ignored by the outer solvers.
    pub inner_rule: StoppingRule,
    /// Inexactness factor for the stationarity-target inner rule.
    pub rho: f64,
    /// Maximum number of outer iterations.
    pub max_outer: usize,
    /// Wall-clock budget in seconds.
    pub max_seconds: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m0: 1.0,
            alpha: 2.0,
            beta: 0.9,
            eta_report: 1e6,
            tol: 1e-3,
            inner_rule: StoppingRule::FixedIterations(10),
            rho: 1.0,
            max_outer: 200_000,
            max_seconds: 100.0,
        }
    }
}

impl SolverConfig {
    /// Checks all parameter ranges.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.m0 > 0.0) {
            return Err(Error::InvalidArgument(format!("M0 must be > 0, got {}", self.m0)));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be > 1, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be in (0, 1], got {}",
                self.beta
            )));
        }
        if !(self.eta_report > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must be > 0, got {}",
                self.eta_report
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must be >= 0, got {}",
                self.rho
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be >= 1".into()));
        }
        if !(self.max_seconds > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_seconds must be > 0, got {}",
                self.max_seconds
            )));
        }
        if let StoppingRule::FixedIterations(0) = self.inner_rule {
            return Err(Error::InvalidArgument(
                "fixed inner iteration count must be >= 1".into(),
            ));
        }
        if let StoppingRule::Exact(tol) = self.inner_rule {
            if !(tol > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "exact inner tolerance must be > 0, got {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// One trace row: a trial of the outer loop, or the terminal snapshot
/// (`inner_iterations == 0`, `lambda` absent).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Outer iteration index; repeated across rejected trials.
    pub k: usize,
    /// Objective at the current point `x_k`.
    pub f_value: f64,
    /// `||F(x_k)||`.
    pub norm_residual: f64,
    /// `||G_eta(x_k)||` for the reporting `eta`.
    pub norm_gradient_mapping: f64,
    /// Current backtracked estimate (`M` for the LM method, the curvature
    /// estimate for the PG baseline, `mu` for the residual-test baseline).
    pub m_estimate: f64,
    /// Damping used by an accepted LM step; absent on rejected trials,
    /// fallback steps, and terminal rows.
    pub lambda: Option<f64>,
    /// Whether this row moved the iterate.
    pub accepted: bool,
    /// Inner iterations spent on this trial (line-search trials for
    /// fallback rows).
    pub inner_iterations: usize,
    /// Cumulative residual evaluations after this row.
    pub residual_evals: u64,
    /// Cumulative Jacobian evaluations after this row.
    pub jacobian_evals: u64,
    /// Wall-clock seconds since the run started.
    pub elapsed_seconds: f64,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: Status,
    /// Final feasible point: the certified point `P_eta(x_k)` on
    /// convergence, the last iterate otherwise.
    pub x_final: DVector<f64>,
    /// Stationarity certificate at the last iterate.
    pub certificate: StationarityReport,
    /// One row per trial plus a terminal snapshot.
    pub trace: Vec<IterationRecord>,
    /// Number of rejected trials over the whole run.
    pub unsuccessful_count: usize,
}

/// Solver failure modes. Numeric failures carry the trace recorded so far.
#[derive(Debug, ThisError)]
pub enum SolveError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("numeric failure at trace length {}: {message}", trace.len())]
    Numeric {
        message: String,
        trace: Vec<IterationRecord>,
    },
}

/// Parameters of the residual-test LM baseline. `delta = 2` is the
/// squared-residual damping rule, `delta = 1` the plain-residual rule.
#[derive(Debug, Clone)]
pub struct HybridParams {
    /// Damping exponent in `lambda_k = mu ||F_k||^delta`, in `(0, 2]`.
    pub delta: f64,
    /// Damping scale `mu > 0`.
    pub mu: f64,
    /// Accept the LM step when `||F(y_k)|| <= gamma_accept ||F_k||`.
    pub gamma_accept: f64,
    /// Armijo slope fraction for the projected-gradient fallback.
    pub sigma_armijo: f64,
    /// Step shrink factor of the fallback line search.
    pub beta_ls: f64,
}

impl HybridParams {
    /// Plain-residual damping (`delta = 1`).
    pub fn fan() -> Self {
        Self {
            delta: 1.0,
            mu: 1.0,
            gamma_accept: 0.99995,
            sigma_armijo: 1e-4,
            beta_ls: 0.9,
        }
    }

    /// Squared-residual damping (`delta = 2`).
    pub fn kyf() -> Self {
        Self {
            delta: 2.0,
            ..Self::fan()
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.delta > 0.0 && self.delta <= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must be in (0, 2], got {}",
                self.delta
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.gamma_accept > 0.0 && self.gamma_accept < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma_accept must be in (0, 1), got {}",
                self.gamma_accept
            )));
        }
        if !(self.sigma_armijo > 0.0 && self.sigma_armijo < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_armijo must be in (0, 1), got {}",
                self.sigma_armijo
            )));
        }
        if !(self.beta_ls > 0.0 && self.beta_ls < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta_ls must be in (0, 1), got {}",
                self.beta_ls
            )));
        }
        Ok(())
    }
}

/// Everything the outer loop needs about the current point. Costs exactly
/// one residual and one Jacobian evaluation.
struct PointData {
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    f_value: f64,
    norm_residual: f64,
    grad: DVector<f64>,
    norm_g: f64,
}

fn evaluate_point(
    problem: &ResidualProblem,
    x: &DVector<f64>,
    eta: f64,
) -> Result<PointData, Error> {
    let residual = problem.residual(x)?;
    let jacobian = problem.jacobian(x)?;
    let norm_residual = residual.norm();
    let f_value = 0.5 * norm_residual * norm_residual;
    if !f_value.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective {f_value}")));
    }
    let grad = jacobian.transpose() * &residual;
    let norm_g =
        gradient_mapping_with_gradient(problem.feasible_set(), x, &grad, eta).norm();
    Ok(PointData {
        residual,
        jacobian,
        f_value,
        norm_residual,
        grad,
        norm_g,
    })
}

fn check_start(problem: &ResidualProblem, x0: &DVector<f64>) -> Result<(), Error> {
    if x0.len() != problem.dim_d() {
        return Err(Error::DimensionMismatch {
            context: "starting point",
            expected: problem.dim_d(),
            actual: x0.len(),
        });
    }
    if !problem.is_feasible(x0) {
        let dist = (x0 - problem.feasible_set().project(x0)).norm();
        return Err(Error::Infeasible { distance: dist });
    }
    Ok(())
}

/// Shared per-iteration bookkeeping: terminal checks and the terminal row.
struct Loop<'a> {
    problem: &'a ResidualProblem,
    eta: f64,
    tol: f64,
    max_outer: usize,
    max_seconds: f64,
    start: Instant,
    trace: Vec<IterationRecord>,
    unsuccessful: usize,
}

impl<'a> Loop<'a> {
    fn new(problem: &'a ResidualProblem, config: &SolverConfig) -> Self {
        Self {
            problem,
            eta: config.eta_report,
            tol: config.tol,
            max_outer: config.max_outer,
            max_seconds: config.max_seconds,
            start: Instant::now(),
            trace: Vec::new(),
            unsuccessful: 0,
        }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn record(&mut self, k: usize, data: &PointData, m_estimate: f64, lambda: Option<f64>, accepted: bool, inner_iterations: usize) {
        let counts = self.problem.evaluation_counts();
        self.trace.push(IterationRecord {
            k,
            f_value: data.f_value,
            norm_residual: data.norm_residual,
            norm_gradient_mapping: data.norm_g,
            m_estimate,
            lambda,
            accepted,
            inner_iterations,
            residual_evals: counts.residual,
            jacobian_evals: counts.jacobian,
            elapsed_seconds: self.elapsed(),
        });
    }

    /// Returns the final report if the run is over at the current point.
    fn terminal(
        &mut self,
        k: usize,
        x: &DVector<f64>,
        data: &PointData,
        m_estimate: f64,
    ) -> Option<SolveReport> {
        let status = if data.norm_residual <= ZERO_RESIDUAL_TOL || data.norm_g <= self.tol {
            Some(Status::Converged)
        } else if k >= self.max_outer {
            Some(Status::MaxOuterReached)
        } else if self.elapsed() >= self.max_seconds {
            Some(Status::Timeout)
        } else {
            None
        };
        let status = status?;
        self.record(k, data, m_estimate, None, true, 0);
        Some(self.finish(status, x, data))
    }

    fn finish(&mut self, status: Status, x: &DVector<f64>, data: &PointData) -> SolveReport {
        let certificate =
            certify_with_gradient(self.problem.feasible_set(), x, &data.grad, self.eta);
        let x_final = if status == Status::Converged {
            certificate.point.clone()
        } else {
            x.clone()
        };
        SolveReport {
            status,
            x_final,
            certificate,
            trace: std::mem::take(&mut self.trace),
            unsuccessful_count: self.unsuccessful,
        }
    }

    /// Timeout check between trials; the final report reuses the prologue
    /// data of the current point.
    fn timed_out(&mut self, k: usize, x: &DVector<f64>, data: &PointData, m_estimate: f64) -> Option<SolveReport> {
        if self.elapsed() >= self.max_seconds {
            self.record(k, data, m_estimate, None, true, 0);
            Some(self.finish(Status::Timeout, x, data))
        } else {
            None
        }
    }

    fn fail(&mut self, err: Error) -> SolveError {
        SolveError::Numeric {
            message: err.to_string(),
            trace: std::mem::take(&mut self.trace),
        }
    }
}

fn effective_rule(config: &SolverConfig, damping: f64, norm_residual: f64) -> StoppingRule {
    match config.inner_rule {
        StoppingRule::StationarityTarget(_) => {
            StoppingRule::StationarityTarget(config.rho * damping * norm_residual)
        }
        other => other,
    }
}

/// Majorization-based Levenberg-Marquardt method.
///
/// Per outer iteration `k`: evaluate `F_k`, `J_k` and stop if converged;
/// otherwise set `mu_k = M ||F_k||`, solve the damped subproblem inexactly,
/// and accept the candidate only if the model majorizes the objective there
/// ([`majorization_holds`]). Rejected trials multiply `M` by `alpha` and
/// re-solve the subproblem without re-evaluating `F_k` or `J_k`; accepted
/// steps multiply `M` by `beta`.
pub fn lm_solve(
    problem: &ResidualProblem,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    check_start(problem, x0)?;
    let mut state = Loop::new(problem, config);
    let set = problem.feasible_set();
    let mut x = x0.clone();
    let mut m_estimate = config.m0;

    for k in 0.. {
        let data = match evaluate_point(problem, &x, config.eta_report) {
            Ok(d) => d,
            Err(e) => return Err(state.fail(e)),
        };
        if let Some(report) = state.terminal(k, &x, &data, m_estimate) {
            return Ok(report);
        }

        let mut model = match LmModel::from_parts(
            x.clone(),
            data.residual.clone(),
            data.jacobian.clone(),
            m_estimate * data.norm_residual,
        ) {
            Ok(m) => m,
            Err(e) => return Err(state.fail(e)),
        };

        // Trial loop: re-damp and re-solve until the majorization test
        // accepts the candidate.
        loop {
            let mu = m_estimate * data.norm_residual;
            if !mu.is_finite() {
                return Err(state.fail(Error::Numeric(format!("damping overflow {mu}"))));
            }
            model = match model.with_damping(mu) {
                Ok(m) => m,
                Err(e) => return Err(state.fail(e)),
            };
            let rule = effective_rule(config, mu, data.norm_residual);
            let inner = match accelerated_pg(&model, set, rule) {
                Ok(r) => r,
                Err(e) => return Err(state.fail(e)),
            };
            let accepted = match majorization_holds(problem, &model, &inner.point) {
                Ok(a) => a,
                Err(e) => return Err(state.fail(e)),
            };
            if accepted {
                state.record(k, &data, m_estimate, Some(mu), true, inner.inner_iterations);
                x = inner.point;
                m_estimate = (config.beta * m_estimate).max(ESTIMATE_FLOOR);
                break;
            }
            state.record(k, &data, m_estimate, None, false, inner.inner_iterations);
            state.unsuccessful += 1;
            m_estimate *= config.alpha;
            if let Some(report) = state.timed_out(k, &x, &data, m_estimate) {
                return Ok(report);
            }
        }
    }
    unreachable!("outer loop exits through terminal checks");
}

/// Projected-gradient baseline with a backtracked curvature estimate.
///
/// A step `z = proj_C(x_k - grad f(x_k) / eta)` is accepted when the
/// quadratic upper bound with parameter `eta` holds at `z`; rejections
/// multiply the estimate by `alpha`, acceptances shrink it by `beta`.
pub fn pg_baseline_solve(
    problem: &ResidualProblem,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    check_start(problem, x0)?;
    let mut state = Loop::new(problem, config);
    let set = problem.feasible_set();
    let mut x = x0.clone();
    let mut curvature = config.m0;

    for k in 0.. {
        let data = match evaluate_point(problem, &x, config.eta_report) {
            Ok(d) => d,
            Err(e) => return Err(state.fail(e)),
        };
        if let Some(report) = state.terminal(k, &x, &data, curvature) {
            return Ok(report);
        }

        loop {
            if !curvature.is_finite() {
                return Err(state.fail(Error::Numeric(format!(
                    "curvature estimate overflow {curvature}"
                ))));
            }
            let z = prox_step_with_gradient(set, &x, &data.grad, curvature);
            let f_z = match problem.objective(&z) {
                Ok(v) => v,
                Err(e) => return Err(state.fail(e)),
            };
            let step = &z - &x;
            let bound =
                data.f_value + data.grad.dot(&step) + 0.5 * curvature * step.norm_squared();
            if f_z <= bound + PG_ACCEPT_SLACK * (1.0 + bound.abs()) {
                state.record(k, &data, curvature, None, true, 0);
                x = z;
                curvature = (config.beta * curvature).max(ESTIMATE_FLOOR);
                break;
            }
            state.record(k, &data, curvature, None, false, 0);
            state.unsuccessful += 1;
            curvature *= config.alpha;
            if let Some(report) = state.timed_out(k, &x, &data, curvature) {
                return Ok(report);
            }
        }
    }
    unreachable!("outer loop exits through terminal checks");
}

/// Residual-test LM baseline: damping `lambda_k = mu ||F_k||^delta`, step
/// accepted when it contracts the residual norm by `gamma_accept`, and a
/// projected-gradient Armijo line search otherwise.
pub fn hybrid_lm_solve(
    problem: &ResidualProblem,
    x0: &DVector<f64>,
    config: &SolverConfig,
    params: &HybridParams,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    params.validate()?;
    check_start(problem, x0)?;
    let mut state = Loop::new(problem, config);
    let set = problem.feasible_set();
    let mut x = x0.clone();

    for k in 0.. {
        let data = match evaluate_point(problem, &x, config.eta_report) {
            Ok(d) => d,
            Err(e) => return Err(state.fail(e)),
        };
        if let Some(report) = state.terminal(k, &x, &data, params.mu) {
            return Ok(report);
        }

        let lambda = params.mu * data.norm_residual.powf(params.delta);
        let model = match LmModel::from_parts(
            x.clone(),
            data.residual.clone(),
            data.jacobian.clone(),
            lambda,
        ) {
            Ok(m) => m,
            Err(e) => return Err(state.fail(e)),
        };
        let rule = effective_rule(config, lambda, data.norm_residual);
        let inner = match accelerated_pg(&model, set, rule) {
            Ok(r) => r,
            Err(e) => return Err(state.fail(e)),
        };
        let candidate_residual = match problem.residual(&inner.point) {
            Ok(r) => r.norm(),
            Err(e) => return Err(state.fail(e)),
        };
        if candidate_residual <= params.gamma_accept * data.norm_residual {
            state.record(k, &data, params.mu, Some(lambda), true, inner.inner_iterations);
            x = inner.point;
            continue;
        }
        state.record(k, &data, params.mu, None, false, inner.inner_iterations);
        state.unsuccessful += 1;
        if let Some(report) = state.timed_out(k, &x, &data, params.mu) {
            return Ok(report);
        }

        // Projected-gradient Armijo fallback.
        let mut fallback: Option<(DVector<f64>, f64)> = None;
        let mut last: Option<(DVector<f64>, f64)> = None;
        let mut trials = 0;
        for l in 0..=ARMIJO_MAX_HALVINGS {
            let t = params.beta_ls.powi(l as i32);
            let z = set.project(&(&x - &data.grad * t));
            let f_z = match problem.objective(&z) {
                Ok(v) => v,
                Err(e) => return Err(state.fail(e)),
            };
            trials = l + 1;
            let slope = data.grad.dot(&(&z - &x));
            if f_z <= data.f_value + params.sigma_armijo * slope {
                fallback = Some((z, f_z));
                break;
            }
            last = Some((z, f_z));
        }
        match fallback {
            Some((z, _)) => {
                state.record(k, &data, params.mu, None, true, trials);
                x = z;
            }
            None => {
                // Line search stalled: continue from the smallest tried step
                // only if it still decreases f.
                match last {
                    Some((z, f_z)) if f_z < data.f_value => {
                        state.record(k, &data, params.mu, None, true, trials);
                        x = z;
                    }
                    _ => {
                        state.record(k, &data, params.mu, None, true, 0);
                        return Ok(state.finish(Status::MaxOuterReached, &x, &data));
                    }
                }
            }
        }
    }
    unreachable!("outer loop exits through terminal checks");
}
