//! Single benchmark runs and comparison suites.
//!
//! A run pairs one seeded instance with one solver and produces a trace CSV
//! plus a `.meta.json` sidecar carrying the run identity and outcome (the
//! trace columns themselves are fixed and carry neither). Suites fan runs
//! out over worker threads, each run owning its own freshly generated
//! instance so the evaluation counters meter exactly that run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mmlm::{
    hybrid_lm_solve, lm_solve, pg_baseline_solve, HybridParams, IterationRecord, SolveError,
    SolveReport, SolverConfig, Status, StoppingRule,
};

use crate::instance::{generate_instance, InstanceSpec, X0Mode};
use crate::summary::{aggregate, write_summary_csv, RunMetrics};
use crate::trace::write_trace_csv;
use crate::BenchError;

/// Which solver a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Majorization-based LM method.
    Proposed,
    /// Residual-test LM with damping `mu ||F_k||`.
    Fan,
    /// Residual-test LM with damping `mu ||F_k||^2`.
    Kyf,
    /// Projected gradient with backtracked curvature.
    Pg,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Proposed,
        SolverKind::Fan,
        SolverKind::Kyf,
        SolverKind::Pg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Proposed => "proposed",
            SolverKind::Fan => "fan",
            SolverKind::Kyf => "kyf",
            SolverKind::Pg => "pg",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(SolverKind::Proposed),
            "fan" => Ok(SolverKind::Fan),
            "kyf" => Ok(SolverKind::Kyf),
            "pg" => Ok(SolverKind::Pg),
            other => Err(BenchError::Config(format!(
                "unknown solver {other:?}; expected proposed|fan|kyf|pg"
            ))),
        }
    }
}

/// Inner stopping rule in its CLI/config spelling:
/// `fixed:T`, `target:RHO`, or `exact`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerRuleSpec {
    Fixed(usize),
    Target(f64),
    Exact,
}

impl InnerRuleSpec {
    /// Stationarity tolerance used by the `exact` spelling.
    pub const EXACT_TOL: f64 = 1e-12;

    /// The rule handed to the solver config; for `target` the per-iteration
    /// threshold is derived from `rho` inside the solver.
    pub fn to_rule(self) -> StoppingRule {
        match self {
            InnerRuleSpec::Fixed(t) => StoppingRule::FixedIterations(t),
            InnerRuleSpec::Target(_) => StoppingRule::StationarityTarget(0.0),
            InnerRuleSpec::Exact => StoppingRule::Exact(Self::EXACT_TOL),
        }
    }

    pub fn rho(self) -> f64 {
        match self {
            InnerRuleSpec::Target(rho) => rho,
            _ => 1.0,
        }
    }

    /// Spelling safe for file names (`:` replaced by `-`).
    pub fn file_tag(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for InnerRuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnerRuleSpec::Fixed(t) => write!(f, "fixed:{t}"),
            InnerRuleSpec::Target(rho) => write!(f, "target:{rho}"),
            InnerRuleSpec::Exact => f.write_str("exact"),
        }
    }
}

impl FromStr for InnerRuleSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            BenchError::Config(format!(
                "unknown inner rule {s:?}; expected fixed:T, target:RHO, or exact"
            ))
        };
        if s == "exact" {
            return Ok(InnerRuleSpec::Exact);
        }
        if let Some(t) = s.strip_prefix("fixed:") {
            let t: usize = t.parse().map_err(|_| bad())?;
            if t == 0 {
                return Err(BenchError::Config("fixed:T needs T >= 1".into()));
            }
            return Ok(InnerRuleSpec::Fixed(t));
        }
        if let Some(rho) = s.strip_prefix("target:") {
            let rho: f64 = rho.parse().map_err(|_| bad())?;
            if !(rho >= 0.0) {
                return Err(BenchError::Config("target:RHO needs RHO >= 0".into()));
            }
            return Ok(InnerRuleSpec::Target(rho));
        }
        Err(bad())
    }
}

impl Serialize for InnerRuleSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InnerRuleSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub inner: InnerRuleSpec,
    pub tol: f64,
    pub eta: f64,
    pub timeout: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
}

pub(crate) fn default_max_outer() -> usize {
    200_000
}

impl RunConfig {
    pub fn new(solver: SolverKind, inner: InnerRuleSpec) -> Self {
        Self {
            solver,
            inner,
            tol: 1e-3,
            eta: 1e6,
            timeout: 100.0,
            max_outer: default_max_outer(),
        }
    }

    pub fn to_solver_config(&self) -> SolverConfig {
        SolverConfig {
            eta_report: self.eta,
            tol: self.tol,
            inner_rule: self.inner.to_rule(),
            rho: self.inner.rho(),
            max_outer: self.max_outer,
            max_seconds: self.timeout,
            ..SolverConfig::default()
        }
    }
}

/// Outcome classification written to the meta sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxOuter,
    Timeout,
    Failed,
}

impl From<Status> for RunStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Converged => RunStatus::Converged,
            Status::MaxOuterReached => RunStatus::MaxOuter,
            Status::Timeout => RunStatus::Timeout,
        }
    }
}

/// Serializable run identity and result; the `.meta.json` sidecar format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub spec: InstanceSpec,
    pub solver: SolverKind,
    pub inner: InnerRuleSpec,
    pub tol: f64,
    pub eta: f64,
    pub timeout: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub wall_seconds: f64,
    pub f_evals: u64,
    pub j_evals: u64,
    pub outer_iterations: usize,
    pub unsuccessful_count: usize,
    pub final_norm_f: Option<f64>,
    pub final_norm_g: Option<f64>,
    pub certified_epsilon: Option<f64>,
}

impl RunOutcome {
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            d: self.spec.d,
            n: self.spec.n,
            m: self.spec.m,
            sigma_noise: self.spec.sigma_noise,
            seed: self.spec.seed,
            solver: self.solver.to_string(),
            inner: self.inner.to_string(),
            status: self.status,
            wall_seconds: self.wall_seconds,
            f_evals: self.f_evals,
            j_evals: self.j_evals,
            outer_iterations: self.outer_iterations,
        }
    }
}

/// A finished run: outcome plus the full trace.
#[derive(Debug, Clone)]
pub struct CompletedRun {
    pub outcome: RunOutcome,
    pub trace: Vec<IterationRecord>,
}

fn dispatch(
    kind: SolverKind,
    problem: &mmlm::ResidualProblem,
    x0: &nalgebra::DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveReport, SolveError> {
    match kind {
        SolverKind::Proposed => lm_solve(problem, x0, config),
        SolverKind::Pg => pg_baseline_solve(problem, x0, config),
        SolverKind::Fan => hybrid_lm_solve(problem, x0, config, &HybridParams::fan()),
        SolverKind::Kyf => hybrid_lm_solve(problem, x0, config, &HybridParams::kyf()),
    }
}

/// Runs one solver on one freshly generated instance. Solver failures are
/// recorded in the outcome rather than propagated, so a suite survives
/// individual numeric failures.
pub fn run_single(spec: &InstanceSpec, cfg: &RunConfig) -> Result<CompletedRun, BenchError> {
    let instance = generate_instance(spec)?;
    let solver_config = cfg.to_solver_config();
    let started = Instant::now();
    let result = dispatch(cfg.solver, instance.problem(), instance.x0(), &solver_config);
    let wall_seconds = started.elapsed().as_secs_f64();
    let counts = instance.problem().evaluation_counts();

    let base = RunOutcome {
        spec: spec.clone(),
        solver: cfg.solver,
        inner: cfg.inner,
        tol: cfg.tol,
        eta: cfg.eta,
        timeout: cfg.timeout,
        status: RunStatus::Failed,
        error: None,
        wall_seconds,
        f_evals: counts.residual,
        j_evals: counts.jacobian,
        outer_iterations: 0,
        unsuccessful_count: 0,
        final_norm_f: None,
        final_norm_g: None,
        certified_epsilon: None,
    };

    match result {
        Ok(report) => {
            let last = report.trace.last();
            let outcome = RunOutcome {
                status: report.status.into(),
                outer_iterations: last.map(|r| r.k).unwrap_or(0),
                unsuccessful_count: report.unsuccessful_count,
                final_norm_f: last.map(|r| r.norm_residual),
                final_norm_g: last.map(|r| r.norm_gradient_mapping),
                certified_epsilon: Some(report.certificate.certified_epsilon),
                ..base
            };
            Ok(CompletedRun {
                outcome,
                trace: report.trace,
            })
        }
        Err(SolveError::Numeric { message, trace }) => {
            let outcome = RunOutcome {
                error: Some(message),
                outer_iterations: trace.last().map(|r| r.k).unwrap_or(0),
                ..base
            };
            Ok(CompletedRun { outcome, trace })
        }
        Err(SolveError::Invalid(e)) => Err(BenchError::Core(e)),
    }
}

/// Writes the `.meta.json` sidecar next to a trace file.
pub fn write_meta(path: &Path, outcome: &RunOutcome) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(outcome).expect("outcome serializes");
    fs::write(path, text + "\n").map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a `.meta.json` sidecar.
pub fn read_meta(path: &Path) -> Result<RunOutcome, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| BenchError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Problem shape of a suite entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub n: usize,
    pub m: usize,
}

/// One solver/inner-rule pairing of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub solver: SolverKind,
    pub inner: InnerRuleSpec,
}

/// A comparison suite: shapes x seeds x solver pairings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub shapes: Vec<Shape>,
    pub sigma_noise: f64,
    pub x0_mode: X0Mode,
    pub seeds: Vec<u64>,
    pub runs: Vec<SuiteRun>,
    pub tol: f64,
    pub eta: f64,
    pub timeout: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
}

impl SuiteConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| BenchError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), BenchError> {
        let text = serde_json::to_string_pretty(self).expect("suite config serializes");
        fs::write(path, text + "\n").map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Global-performance preset: noisy instances from the zero start, all four
/// solvers, ten inner iterations, tolerance 1e-3 at eta = 1e6.
pub fn global_suite(seed_count: usize) -> SuiteConfig {
    SuiteConfig {
        shapes: vec![Shape { d: 100, n: 200, m: 1 }],
        sigma_noise: 0.1,
        x0_mode: X0Mode::Zero,
        seeds: (1..=seed_count as u64).collect(),
        runs: SolverKind::ALL
            .iter()
            .map(|&solver| SuiteRun {
                solver,
                inner: InnerRuleSpec::Fixed(10),
            })
            .collect(),
        tol: 1e-3,
        eta: 1e6,
        timeout: 100.0,
        max_outer: default_max_outer(),
    }
}

/// Local-convergence preset: zero-residual instances started near the
/// solution, the proposed method under the two inner stopping regimes,
/// run until the residual bottoms out.
pub fn local_suite(seed_count: usize) -> SuiteConfig {
    SuiteConfig {
        shapes: vec![Shape { d: 100, n: 100, m: 1 }],
        sigma_noise: 0.0,
        x0_mode: X0Mode::near_solution(),
        seeds: (1..=seed_count as u64).collect(),
        runs: vec![
            SuiteRun {
                solver: SolverKind::Proposed,
                inner: InnerRuleSpec::Target(1.0),
            },
            SuiteRun {
                solver: SolverKind::Proposed,
                inner: InnerRuleSpec::Fixed(10),
            },
        ],
        tol: 1e-12,
        eta: 1e6,
        timeout: 100.0,
        max_outer: 40,
    }
}

/// Runs every (shape, seed, solver) combination of the suite on `jobs`
/// worker threads, writing one trace CSV and one meta sidecar per run plus
/// `summary.csv` across the whole suite. Failed runs are recorded and do
/// not abort the suite.
pub fn run_suite(config: &SuiteConfig, out_dir: &Path, jobs: usize) -> Result<(), BenchError> {
    fs::create_dir_all(out_dir).map_err(|source| BenchError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    config.to_json_file(&out_dir.join("suite_config.json"))?;

    let mut planned: Vec<(InstanceSpec, RunConfig, PathBuf)> = Vec::new();
    for shape in &config.shapes {
        for &seed in &config.seeds {
            let spec = InstanceSpec::new(
                shape.d,
                shape.n,
                shape.m,
                config.sigma_noise,
                seed,
                config.x0_mode,
            );
            for run in &config.runs {
                let mut cfg = RunConfig::new(run.solver, run.inner);
                cfg.tol = config.tol;
                cfg.eta = config.eta;
                cfg.timeout = config.timeout;
                cfg.max_outer = config.max_outer;
                let stem = format!("{}_{}_{}", run.solver, run.inner.file_tag(), spec.tag());
                planned.push((spec.clone(), cfg, out_dir.join(stem)));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunMetrics> = pool.install(|| {
        planned
            .par_iter()
            .map(|(spec, cfg, stem)| -> Result<RunMetrics, BenchError> {
                let completed = run_single(spec, cfg)?;
                write_trace_csv(&stem.with_extension("csv"), &completed.trace)?;
                write_meta(&stem.with_extension("meta.json"), &completed.outcome)?;
                Ok(completed.outcome.metrics())
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let rows = aggregate(&outcomes);
    write_summary_csv(&out_dir.join("summary.csv"), &rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_rule_spellings_roundtrip() {
        for s in ["fixed:10", "target:1", "target:0.5", "exact"] {
            let rule: InnerRuleSpec = s.parse().unwrap();
            assert_eq!(rule.to_string(), s);
        }
        assert!("fixed:0".parse::<InnerRuleSpec>().is_err());
        assert!("bogus".parse::<InnerRuleSpec>().is_err());
    }

    #[test]
    fn solver_kind_spellings() {
        for kind in SolverKind::ALL {
            assert_eq!(kind.as_str().parse::<SolverKind>().unwrap(), kind);
        }
    }

    #[test]
    fn run_single_small_instance_converges() {
        let spec = InstanceSpec::new(5, 10, 1, 0.1, 3, X0Mode::Zero);
        let cfg = RunConfig::new(SolverKind::Proposed, InnerRuleSpec::Fixed(10));
        let completed = run_single(&spec, &cfg).unwrap();
        assert_eq!(completed.outcome.status, RunStatus::Converged);
        assert!(completed.outcome.f_evals > 0);
        assert!(!completed.trace.is_empty());
        let last = completed.trace.last().unwrap();
        assert!(last.norm_gradient_mapping <= cfg.tol);
    }

    #[test]
    fn suite_presets_have_expected_shape() {
        let global = global_suite(10);
        assert_eq!(global.seeds.len(), 10);
        assert_eq!(global.runs.len(), 4);
        assert_eq!(global.sigma_noise, 0.1);
        let local = local_suite(3);
        assert_eq!(local.runs.len(), 2);
        assert_eq!(local.sigma_noise, 0.0);
    }
}
