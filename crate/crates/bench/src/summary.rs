//! Aggregation of run outcomes into the summary table.
//!
//! One summary row per (shape, noise level, solver, inner rule): mean and
//! standard deviation of time-to-tolerance, evaluation counts, and outer
//! iterations over the seeds. Following the usual table convention, the
//! time columns show `---` when any seed failed to converge, and the
//! remaining statistics are computed over the converged runs only (the
//! `converged` column flags how many that is).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::runner::{read_meta, RunStatus};
use crate::trace::read_trace_csv;
use crate::BenchError;

/// Per-run metrics entering the aggregation.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub sigma_noise: f64,
    pub seed: u64,
    pub solver: String,
    pub inner: String,
    pub status: RunStatus,
    pub wall_seconds: f64,
    pub f_evals: u64,
    pub j_evals: u64,
    pub outer_iterations: usize,
}

/// One aggregated row. `None` statistics render as `---`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub sigma_noise: f64,
    pub solver: String,
    pub inner: String,
    pub runs: usize,
    pub converged: usize,
    pub mean_time_s: Option<f64>,
    pub std_time_s: Option<f64>,
    pub mean_f_evals: Option<f64>,
    pub std_f_evals: Option<f64>,
    pub mean_j_evals: Option<f64>,
    pub std_j_evals: Option<f64>,
    pub mean_outer: Option<f64>,
    pub std_outer: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

type GroupKey = (usize, usize, usize, String, String, String);

/// Groups metrics by (shape, noise, solver, inner) and computes the stats.
pub fn aggregate(metrics: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunMetrics>> = BTreeMap::new();
    for m in metrics {
        groups
            .entry((
                m.d,
                m.n,
                m.m,
                format!("{:e}", m.sigma_noise),
                m.solver.clone(),
                m.inner.clone(),
            ))
            .or_default()
            .push(m);
    }
    groups
        .into_iter()
        .map(|((d, n, m, _, solver, inner), runs)| {
            let sigma_noise = runs[0].sigma_noise;
            let total = runs.len();
            let done: Vec<&&RunMetrics> = runs
                .iter()
                .filter(|r| r.status == RunStatus::Converged)
                .collect();
            let converged = done.len();
            let stat = |extract: fn(&RunMetrics) -> f64| -> (Option<f64>, Option<f64>) {
                if done.is_empty() {
                    (None, None)
                } else {
                    let values: Vec<f64> = done.iter().map(|r| extract(r)).collect();
                    let (mean, std) = mean_std(&values);
                    (Some(mean), Some(std))
                }
            };
            // Time follows the table convention: any non-converged seed
            // blanks the column.
            let (mean_time_s, std_time_s) = if converged == total && total > 0 {
                stat(|r| r.wall_seconds)
            } else {
                (None, None)
            };
            let (mean_f_evals, std_f_evals) = stat(|r| r.f_evals as f64);
            let (mean_j_evals, std_j_evals) = stat(|r| r.j_evals as f64);
            let (mean_outer, std_outer) = stat(|r| r.outer_iterations as f64);
            SummaryRow {
                d,
                n,
                m,
                sigma_noise,
                solver,
                inner,
                runs: total,
                converged,
                mean_time_s,
                std_time_s,
                mean_f_evals,
                std_f_evals,
                mean_j_evals,
                std_j_evals,
                mean_outer,
                std_outer,
            }
        })
        .collect()
}

/// Collects per-run metrics from a directory of trace CSVs and their
/// `.meta.json` sidecars. Identity and status come from the sidecar; time,
/// evaluation counts, and outer iterations are re-derived from the trace.
pub fn collect_dir(dir: &Path) -> Result<Vec<RunMetrics>, BenchError> {
    let entries = fs::read_dir(dir).map_err(|source| BenchError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut metas: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".meta.json")))
        .collect();
    metas.sort();

    let mut metrics = Vec::new();
    for meta_path in metas {
        let outcome = read_meta(&meta_path)?;
        let stem = meta_path
            .to_string_lossy()
            .trim_end_matches(".meta.json")
            .to_string();
        let trace_path = Path::new(&stem).with_extension("csv");
        let mut m = outcome.metrics();
        if trace_path.exists() {
            let rows = read_trace_csv(&trace_path)?;
            if let Some(last) = rows.last() {
                m.wall_seconds = last.elapsed_s;
                m.f_evals = last.f_evals;
                m.j_evals = last.j_evals;
                m.outer_iterations = last.iter;
            }
        }
        metrics.push(m);
    }
    Ok(metrics)
}

fn cell(value: Option<f64>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "---".to_string(),
    }
}

/// Writes the summary table.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), BenchError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| crate::trace::csv_error(path, e))?;
    writer
        .write_record([
            "d",
            "n",
            "m",
            "sigma_noise",
            "solver",
            "inner",
            "runs",
            "converged",
            "mean_time_s",
            "std_time_s",
            "mean_F_evals",
            "std_F_evals",
            "mean_J_evals",
            "std_J_evals",
            "mean_outer",
            "std_outer",
        ])
        .map_err(|e| crate::trace::csv_error(path, e))?;
    for r in rows {
        writer
            .write_record([
                r.d.to_string(),
                r.n.to_string(),
                r.m.to_string(),
                r.sigma_noise.to_string(),
                r.solver.clone(),
                r.inner.clone(),
                r.runs.to_string(),
                r.converged.to_string(),
                cell(r.mean_time_s),
                cell(r.std_time_s),
                cell(r.mean_f_evals),
                cell(r.std_f_evals),
                cell(r.mean_j_evals),
                cell(r.std_j_evals),
                cell(r.mean_outer),
                cell(r.std_outer),
            ])
            .map_err(|e| crate::trace::csv_error(path, e))?;
    }
    writer.flush().map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(seed: u64, status: RunStatus, time: f64, fe: u64) -> RunMetrics {
        RunMetrics {
            d: 10,
            n: 20,
            m: 1,
            sigma_noise: 0.1,
            seed,
            solver: "proposed".into(),
            inner: "fixed:10".into(),
            status,
            wall_seconds: time,
            f_evals: fe,
            j_evals: fe / 2,
            outer_iterations: 7,
        }
    }

    #[test]
    fn single_converged_run_reported_verbatim() {
        let rows = aggregate(&[metric(1, RunStatus::Converged, 1.25, 100)]);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.runs, 1);
        assert_eq!(row.converged, 1);
        assert_eq!(row.mean_time_s, Some(1.25));
        assert_eq!(row.std_time_s, Some(0.0));
        assert_eq!(row.mean_f_evals, Some(100.0));
        assert_eq!(row.mean_outer, Some(7.0));
    }

    #[test]
    fn identical_runs_have_zero_stdev() {
        let rows = aggregate(&[
            metric(1, RunStatus::Converged, 2.0, 50),
            metric(2, RunStatus::Converged, 2.0, 50),
        ]);
        assert_eq!(rows[0].std_time_s, Some(0.0));
        assert_eq!(rows[0].std_f_evals, Some(0.0));
    }

    #[test]
    fn timeout_blanks_the_time_column() {
        let rows = aggregate(&[
            metric(1, RunStatus::Converged, 1.0, 100),
            metric(2, RunStatus::Timeout, 100.0, 900),
        ]);
        let row = &rows[0];
        assert_eq!(row.runs, 2);
        assert_eq!(row.converged, 1);
        assert_eq!(row.mean_time_s, None);
        // Eval stats cover the completed run only.
        assert_eq!(row.mean_f_evals, Some(100.0));
    }

    #[test]
    fn empty_input_empty_summary() {
        assert!(aggregate(&[]).is_empty());
    }
}
