//! Command-line interface of the benchmark harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmlm_bench::{
    generate_instance, global_suite, local_suite, run_single, run_suite, runner::write_meta,
    summary, trace::write_trace_csv, InnerRuleSpec, InstanceSpec, RunConfig, SolverKind,
    SuiteConfig,
};

#[derive(Parser)]
#[command(
    name = "mmlm-bench",
    about = "Benchmark harness for constrained nonlinear least squares solvers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SuitePreset {
    /// Noisy instances, zero start, all four solvers.
    Global,
    /// Zero-residual instances near the solution, proposed method under
    /// both inner stopping regimes.
    Local,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an instance spec and write the canonical instance file.
    Gen {
        /// Instance spec JSON ({d, n, m, sigma_noise, seed, x0_mode}).
        #[arg(long)]
        spec: PathBuf,
        /// Output instance file (stores the spec; data is regenerated from
        /// the seed).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver on one instance and write its trace CSV (+ sidecar).
    Run {
        /// Instance file produced by `gen` (or any valid spec JSON).
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        solver: SolverKind,
        /// Stop when ||G_eta(x_k)|| <= tol.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Gradient-mapping step parameter used for reporting/termination.
        #[arg(long, default_value_t = 1e6)]
        eta: f64,
        /// Inner stopping rule: fixed:T, target:RHO, or exact.
        #[arg(long, default_value = "fixed:10")]
        inner: InnerRuleSpec,
        /// Per-run wall-clock budget in seconds.
        #[arg(long, default_value_t = 100.0)]
        timeout: f64,
        /// Trace CSV output path; a .meta.json sidecar is written next to it.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a comparison suite and write traces plus summary.csv.
    Suite {
        #[arg(value_enum)]
        preset: SuitePreset,
        /// Optional suite config JSON replacing the preset entirely.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of seeds (1..=N) when using a preset.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
    /// Aggregate a directory of traces into a summary CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Gen { spec, out } => {
            let spec = InstanceSpec::from_json_file(&spec)?;
            let instance = generate_instance(&spec)?;
            let residual_at_solution = instance
                .problem()
                .residual(instance.x_star())?
                .norm();
            let f0 = instance.problem().objective(instance.x0())?;
            spec.to_json_file(&out)?;
            println!(
                "instance {}: ||F(x*)|| = {:.3e}, f(x0) = {:.6e}, L_cert = {:.3e} -> {}",
                spec.tag(),
                residual_at_solution,
                f0,
                instance.certified_jacobian_lipschitz(),
                out.display()
            );
        }
        Command::Run {
            instance,
            solver,
            tol,
            eta,
            inner,
            timeout,
            trace,
        } => {
            let spec = InstanceSpec::from_json_file(&instance)?;
            let mut cfg = RunConfig::new(solver, inner);
            cfg.tol = tol;
            cfg.eta = eta;
            cfg.timeout = timeout;
            let completed = run_single(&spec, &cfg)?;
            write_trace_csv(&trace, &completed.trace)?;
            let meta_path = trace.with_extension("meta.json");
            write_meta(&meta_path, &completed.outcome)?;
            let o = &completed.outcome;
            println!(
                "{} on {}: {:?} in {:.3}s, {} F-evals, {} J-evals, {} outer iters, final ||G_eta|| = {}",
                solver,
                spec.tag(),
                o.status,
                o.wall_seconds,
                o.f_evals,
                o.j_evals,
                o.outer_iterations,
                o.final_norm_g.map_or("n/a".into(), |v| format!("{v:.3e}")),
            );
        }
        Command::Suite {
            preset,
            config,
            out_dir,
            seeds,
            jobs,
        } => {
            let suite: SuiteConfig = match config {
                Some(path) => SuiteConfig::from_json_file(&path)?,
                None => match preset {
                    SuitePreset::Global => global_suite(seeds),
                    SuitePreset::Local => local_suite(seeds),
                },
            };
            let total = suite.shapes.len() * suite.seeds.len() * suite.runs.len();
            println!(
                "running {} runs ({} shapes x {} seeds x {} solver configs) on {} threads",
                total,
                suite.shapes.len(),
                suite.seeds.len(),
                suite.runs.len(),
                jobs
            );
            run_suite(&suite, &out_dir, jobs)?;
            println!("wrote traces and summary.csv to {}", out_dir.display());
        }
        Command::Summarize { input, out } => {
            let metrics = summary::collect_dir(&input)?;
            let rows = summary::aggregate(&metrics);
            summary::write_summary_csv(&out, &rows)?;
            println!(
                "summarized {} runs into {} rows -> {}",
                metrics.len(),
                rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}
