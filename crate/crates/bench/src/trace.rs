//! Trace CSV files: one row per outer-loop trial plus a terminal snapshot.
//!
//! Fixed column set, UTF-8, header row, `.` decimal separator, scientific
//! notation permitted:
//!
//! ```text
//! iter,elapsed_s,f,norm_F,norm_G_eta,M,lambda,accepted,inner_iters,F_evals,J_evals
//! ```
//!
//! The `lambda` cell is empty on rows without an accepted LM step. Floats
//! are written in Rust's shortest round-trip form, so reading a trace back
//! reproduces the values exactly.

use std::path::Path;

use mmlm::IterationRecord;

use crate::BenchError;

/// Column header of every trace file.
pub const TRACE_HEADER: [&str; 11] = [
    "iter",
    "elapsed_s",
    "f",
    "norm_F",
    "norm_G_eta",
    "M",
    "lambda",
    "accepted",
    "inner_iters",
    "F_evals",
    "J_evals",
];

/// One parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub elapsed_s: f64,
    pub f: f64,
    pub norm_f: f64,
    pub norm_g_eta: f64,
    pub m: f64,
    pub lambda: Option<f64>,
    pub accepted: bool,
    pub inner_iters: usize,
    pub f_evals: u64,
    pub j_evals: u64,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        TraceRow {
            iter: r.k,
            elapsed_s: r.elapsed_seconds,
            f: r.f_value,
            norm_f: r.norm_residual,
            norm_g_eta: r.norm_gradient_mapping,
            m: r.m_estimate,
            lambda: r.lambda,
            accepted: r.accepted,
            inner_iters: r.inner_iterations,
            f_evals: r.residual_evals,
            j_evals: r.jacobian_evals,
        }
    }
}

/// Converts a csv-layer error into the harness error, keeping the path.
pub(crate) fn csv_error(path: &Path, e: csv::Error) -> BenchError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => BenchError::Io {
            path: path.display().to_string(),
            source,
        },
        other => BenchError::Parse {
            file: path.display().to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes a solver trace to `path`.
pub fn write_trace_csv(path: &Path, trace: &[IterationRecord]) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(TRACE_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in trace {
        writer
            .write_record([
                r.k.to_string(),
                r.elapsed_seconds.to_string(),
                r.f_value.to_string(),
                r.norm_residual.to_string(),
                r.norm_gradient_mapping.to_string(),
                r.m_estimate.to_string(),
                r.lambda.map(|l| l.to_string()).unwrap_or_default(),
                r.accepted.to_string(),
                r.inner_iterations.to_string(),
                r.residual_evals.to_string(),
                r.jacobian_evals.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    line: u64,
    name: &str,
    raw: &str,
) -> Result<T, BenchError> {
    raw.trim().parse().map_err(|_| BenchError::Parse {
        file: file.to_string(),
        line,
        message: format!("cannot parse {name} from {raw:?}"),
    })
}

/// Reads a trace written by [`write_trace_csv`], reporting the file and
/// line of anything malformed.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, BenchError> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    {
        let headers = reader.headers().map_err(|e| BenchError::Parse {
            file: file.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let expected: Vec<&str> = TRACE_HEADER.to_vec();
        let found: Vec<&str> = headers.iter().collect();
        if found != expected {
            return Err(BenchError::Parse {
                file,
                line: 1,
                message: format!("unexpected header {found:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| BenchError::Parse {
            file: file.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != TRACE_HEADER.len() {
            return Err(BenchError::Parse {
                file,
                line,
                message: format!("expected {} fields, got {}", TRACE_HEADER.len(), record.len()),
            });
        }
        let lambda_raw = record[6].trim();
        let lambda = if lambda_raw.is_empty() {
            None
        } else {
            Some(parse_field(&file, line, "lambda", lambda_raw)?)
        };
        rows.push(TraceRow {
            iter: parse_field(&file, line, "iter", &record[0])?,
            elapsed_s: parse_field(&file, line, "elapsed_s", &record[1])?,
            f: parse_field(&file, line, "f", &record[2])?,
            norm_f: parse_field(&file, line, "norm_F", &record[3])?,
            norm_g_eta: parse_field(&file, line, "norm_G_eta", &record[4])?,
            m: parse_field(&file, line, "M", &record[5])?,
            lambda,
            accepted: parse_field(&file, line, "accepted", &record[7])?,
            inner_iters: parse_field(&file, line, "inner_iters", &record[8])?,
            f_evals: parse_field(&file, line, "F_evals", &record[9])?,
            j_evals: parse_field(&file, line, "J_evals", &record[10])?,
        });
    }
    Ok(rows)
}
