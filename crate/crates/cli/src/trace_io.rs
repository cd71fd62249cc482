//! Trace files. The CSV holds the per-iteration scalars in a plot-ready
//! layout; a JSON sidecar holds what the certificate checks additionally need
//! (iterates, steps, metric coefficients, configuration).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use regmin::driver::{Algorithm, IterationRecord};
use regmin::{Metric, PolicyKind, SolverConfig, Status, Trace};

use crate::{read_file, to_json, write_file, Failure};

pub const TRACE_HEADER: &str = "k,fx,gnorm,sigma,snorm,mgradnorm,mdec,rho,accepted";

/// One CSV line. `rho` is empty when no ratio was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub fx: f64,
    pub gnorm: f64,
    pub sigma: f64,
    pub snorm: f64,
    pub mgradnorm: f64,
    pub mdec: f64,
    pub rho: Option<f64>,
    pub accepted: u8,
}

impl TraceRow {
    pub fn from_record(rec: &IterationRecord) -> Self {
        Self {
            k: rec.k,
            fx: rec.f_x,
            gnorm: rec.grad_norm,
            sigma: rec.sigma,
            snorm: rec.s_norm,
            mgradnorm: rec.model_grad_norm,
            mdec: rec.model_decrease,
            rho: rec.rho,
            accepted: rec.accepted as u8,
        }
    }
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(160 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let rho = r.rho.map(fmt_float).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_float(r.fx),
            fmt_float(r.gnorm),
            fmt_float(r.sigma),
            fmt_float(r.snorm),
            fmt_float(r.mgradnorm),
            fmt_float(r.mdec),
            rho,
            r.accepted
        );
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, Failure> {
    let bad = |msg: String| Failure::Usage(format!("malformed trace CSV: {msg}"));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(bad(format!("expected header `{TRACE_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.k != i {
            return Err(bad(format!("row {i} has k = {}", row.k)));
        }
        if row.accepted > 1 {
            return Err(bad(format!("row {i}: accepted must be 0 or 1")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Everything in a [`Trace`] that the CSV does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub problem: String,
    pub algorithm: Algorithm,
    pub config: SolverConfig,
    pub policy: PolicyKind,
    pub a: f64,
    pub psi0: f64,
    /// `psi_k` per iteration.
    pub psi: Vec<f64>,
    /// Rows of the base matrix `B`; `Q_k = scale_k B + shift_k I`.
    pub base_metric: Vec<Vec<f64>>,
    /// `(scale_k, shift_k)` for `k = 0..=K`.
    pub metric_coefficients: Vec<(f64, f64)>,
    pub x0: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
    pub steps: Vec<Vec<f64>>,
    pub quadratic_decrease: Vec<f64>,
    pub f_trial: Vec<f64>,
    pub flagged: Vec<bool>,
    pub final_x: Vec<f64>,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub grad_tol: f64,
    pub status: Status,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl TraceSidecar {
    pub fn from_trace(trace: &Trace) -> Result<Self, Failure> {
        let base = trace.metrics[0].clone();
        if trace.metrics.iter().any(|m| !m.shares_basis(&base)) {
            return Err(Failure::Solver("metric sequence does not share one base matrix".into()));
        }
        let b = base.base_matrix();
        Ok(Self {
            problem: trace.problem.clone(),
            algorithm: trace.algorithm,
            config: trace.config.clone(),
            policy: trace.policy,
            a: trace.a,
            psi0: trace.psi0,
            psi: trace.psi.clone(),
            base_metric: (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect(),
            metric_coefficients: trace.metrics.iter().map(|m| (m.scale(), m.shift())).collect(),
            x0: vec_of(&trace.x0),
            iterates: trace.records.iter().map(|r| vec_of(&r.x)).collect(),
            steps: trace.records.iter().map(|r| vec_of(&r.s)).collect(),
            quadratic_decrease: trace.records.iter().map(|r| r.quadratic_decrease).collect(),
            f_trial: trace.records.iter().map(|r| r.f_trial).collect(),
            flagged: trace.records.iter().map(|r| r.flagged).collect(),
            final_x: vec_of(&trace.final_x),
            final_f: trace.final_f,
            final_grad_norm: trace.final_grad_norm,
            grad_tol: trace.grad_tol,
            status: trace.status,
        })
    }
}

/// Rebuilds a trace from its CSV rows and sidecar.
pub fn assemble_trace(rows: &[TraceRow], side: &TraceSidecar) -> Result<Trace, Failure> {
    let bad = |msg: String| Failure::Usage(format!("trace CSV and sidecar disagree: {msg}"));
    let k_total = rows.len();
    let n = side.x0.len();
    let lens = [
        ("iterates", side.iterates.len()),
        ("steps", side.steps.len()),
        ("psi", side.psi.len()),
        ("quadratic_decrease", side.quadratic_decrease.len()),
        ("f_trial", side.f_trial.len()),
        ("flagged", side.flagged.len()),
        ("metric_coefficients", side.metric_coefficients.len().saturating_sub(1)),
    ];
    for (what, len) in lens {
        if len != k_total {
            return Err(bad(format!("{what} has {len} entries for {k_total} iterations")));
        }
    }
    if side.final_x.len() != n
        || side.base_metric.len() != n
        || side.base_metric.iter().any(|r| r.len() != n)
        || side.iterates.iter().chain(&side.steps).any(|v| v.len() != n)
    {
        return Err(bad(format!("vector or matrix sizes differ from dimension {n}")));
    }
    let base = Metric::from_matrix(DMatrix::from_fn(n, n, |i, j| side.base_metric[i][j]))?;
    let metrics: Vec<Metric> = side
        .metric_coefficients
        .iter()
        .map(|&(scale, shift)| base.with_coefficients(scale, shift))
        .collect();

    let mut records = Vec::with_capacity(k_total);
    for (k, row) in rows.iter().enumerate() {
        let s = DVector::from_column_slice(&side.steps[k]);
        let s_norm = s.norm();
        if (s_norm - row.snorm).abs() > 1e-12 * (1.0 + s_norm) {
            return Err(bad(format!("|s_{k}| = {s_norm:e} but the CSV says {:e}", row.snorm)));
        }
        records.push(IterationRecord {
            k,
            x: DVector::from_column_slice(&side.iterates[k]),
            f_x: row.fx,
            grad_norm: row.gnorm,
            sigma: row.sigma,
            s,
            s_norm: row.snorm,
            model_grad_norm: row.mgradnorm,
            model_decrease: row.mdec,
            quadratic_decrease: side.quadratic_decrease[k],
            f_trial: side.f_trial[k],
            rho: row.rho,
            accepted: row.accepted == 1,
            flagged: side.flagged[k],
        });
    }
    Ok(Trace {
        algorithm: side.algorithm,
        problem: side.problem.clone(),
        config: side.config.clone(),
        policy: side.policy,
        a: side.a,
        psi0: side.psi0,
        records,
        metrics,
        psi: side.psi.clone(),
        x0: DVector::from_column_slice(&side.x0),
        final_x: DVector::from_column_slice(&side.final_x),
        final_f: side.final_f,
        final_grad_norm: side.final_grad_norm,
        grad_tol: side.grad_tol,
        status: side.status,
    })
}

/// `run/trace.csv` pairs with `run/trace.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn save_trace(trace: &Trace, csv_path: &Path) -> Result<(), Failure> {
    let rows: Vec<TraceRow> = trace.records.iter().map(TraceRow::from_record).collect();
    write_file(csv_path, write_trace_csv(&rows))?;
    write_file(&sidecar_path(csv_path), to_json(&TraceSidecar::from_trace(trace)?)?)
}

pub fn load_trace(csv_path: &Path) -> Result<Trace, Failure> {
    let rows = parse_trace_csv(&read_file(csv_path)?)?;
    let side_path = sidecar_path(csv_path);
    let side: TraceSidecar = serde_json::from_str(&read_file(&side_path)?)
        .map_err(|e| Failure::Usage(format!("malformed trace sidecar {}: {e}", side_path.display())))?;
    assemble_trace(&rows, &side)
}
