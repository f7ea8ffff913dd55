//! Benchmark harness for the mmlm solvers: seeded instance generation for
//! the quadratic residual family, single runs and comparison suites with
//! CSV traces, and summary aggregation.

// Parameter checks are written as `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use thiserror::Error;

pub mod instance;
pub mod runner;
pub mod summary;
pub mod trace;

pub use instance::{
    generate_instance, instance_jacobian, instance_residual, Instance, InstanceData,
    InstanceSpec, X0Mode,
};
pub use runner::{
    global_suite, local_suite, run_single, run_suite, CompletedRun, InnerRuleSpec, RunConfig,
    RunStatus, Shape, SolverKind, SuiteConfig, SuiteRun,
};
pub use summary::{aggregate, collect_dir, write_summary_csv, RunMetrics, SummaryRow};
pub use trace::{read_trace_csv, write_trace_csv, TraceRow};

/// Errors of the harness layer.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("parse error in {file}, line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] mmlm::Error),

    #[error("invalid configuration: {0}")]
    Config(String),
}
