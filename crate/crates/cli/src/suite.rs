//! Batch runner: a TOML matrix of `[[run]]` tables, each run and certified
//! independently, aggregated into one report with a verdict per criterion.
//!
//! Criteria evaluated per run (numbering follows the acceptance suite):
//!
//! | id | check                                                                  | applies to                         |
//! |----|------------------------------------------------------------------------|------------------------------------|
//! | 2  | inexactness of every trial step                                        | all runs                           |
//! | 3  | model decrease and accepted objective decrease                         | all runs                           |
//! | 4  | monotone objective, trace consistency                                  | all runs                           |
//! | 5  | summability bound; partial sums stabilize when converged               | all runs                           |
//! | 6  | quasi-Fejer certificate slack at the minimizer                         | alg2 and gradient, known minimizer |
//! | 7  | radius bound, final error and tail distance                            | alg2 and gradient, known minimizer |
//! | 8  | stationary and at the minimizer                                        | alg2 on pseudoconvex problems      |
//! | 9  | convex rate bound                                                      | alg2 on convex problems with f*    |
//! | 10 | every step accepted and equal to `x - alpha grad f`                    | gradient runs                      |
//! | 11 | analytic gradient against central differences at 20 seeded points      | all runs                           |
//!
//! The subproblem oracle comparison (criterion 1) concerns the subsolver alone
//! and lives in the library's acceptance target.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use regmin::audit::audit_run;
use regmin::fejer::{build_certificates, certificate_tolerance, check_radius, min_slack, rate_check, tail_report};
use regmin::{Convexity, Status, Trace};

use crate::commands::{cmd_run, RADIUS_TOL};
use crate::options::{AlgorithmName, PreparedRun, RunOptions};
use crate::{read_file, to_json, write_file, Failure};

pub const FINAL_ERROR_TOL: f64 = 1e-6;
pub const TAIL_TOL: f64 = 1e-4;
pub const STATIONARY_TOL: f64 = 1e-8;
pub const MINIMIZER_TOL: f64 = 1e-5;
pub const RATE_TOL: f64 = 1e-10;
pub const EMBEDDING_TOL: f64 = 1e-12;
pub const GRADIENT_CHECK_TOL: f64 = 1e-6;
pub const GRADIENT_CHECK_SEED: u64 = 1111;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub passed: bool,
    pub detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> CriterionResult {
    CriterionResult {
        passed,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RowReport {
    pub name: String,
    /// False when the row could not be parsed, resolved or run.
    pub ok: bool,
    pub error: Option<String>,
    pub status: Option<Status>,
    pub iterations: Option<usize>,
    pub criteria: BTreeMap<u32, CriterionResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionTotal {
    pub passed: bool,
    pub runs: usize,
    pub failed_runs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub rows: usize,
    pub failed_rows: Vec<String>,
    pub criteria: BTreeMap<u32, CriterionTotal>,
    pub runs: Vec<RowReport>,
}

/// A named matrix row, parsed into options or rejected on its own.
pub type MatrixRow = (String, Result<RunOptions, Failure>);

/// Splits a matrix file into named rows without interpreting them, so that a
/// malformed row fails on its own.
pub fn parse_matrix(text: &str) -> Result<Vec<MatrixRow>, Failure> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Failure::Usage(format!("invalid matrix: {e}")))?;
    let rows = match table.remove("run") {
        None => Vec::new(),
        Some(toml::Value::Array(rows)) => rows,
        Some(_) => return Err(Failure::Usage("`run` must be an array of tables ([[run]])".into())),
    };
    if let Some(key) = table.keys().next() {
        return Err(Failure::Usage(format!("unexpected top-level key `{key}` in matrix")));
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let toml::Value::Table(mut row) = row else {
                return (format!("row-{i}"), Err(Failure::Usage("row is not a table".into())));
            };
            let name = match row.remove("name") {
                Some(toml::Value::String(s)) => s,
                _ => format!("row-{i}"),
            };
            let opts = row
                .try_into::<RunOptions>()
                .map_err(|e| Failure::Usage(format!("invalid row: {e}")));
            let opts = opts.and_then(|o| {
                if o.out_dir.is_some() {
                    Err(Failure::Usage("rows may not set out_dir".into()))
                } else {
                    Ok(o)
                }
            });
            (name, opts)
        })
        .collect())
}

fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.=".contains(c))
        && name != "."
        && name != ".."
}

fn criteria_for(run: &PreparedRun, trace: &Trace) -> Result<BTreeMap<u32, CriterionResult>, Failure> {
    let p = &run.problem;
    let algorithm = run.spec.algorithm;
    let audit = audit_run(p, trace)?;
    let mut out = BTreeMap::new();

    out.insert(
        2,
        verdict(
            audit.inexactness.passed,
            format!("smallest margin {:.3e}", audit.inexactness.worst_margin),
        ),
    );
    out.insert(
        3,
        verdict(
            audit.model_decrease.passed && audit.objective_decrease.passed,
            format!(
                "model margin {:.3e}, objective margin {:.3e}",
                audit.model_decrease.worst_margin, audit.objective_decrease.worst_margin
            ),
        ),
    );
    out.insert(
        4,
        verdict(
            audit.monotone.passed && audit.consistency.passed,
            format!("smallest decrease {:.3e}", audit.monotone.worst_margin),
        ),
    );
    let sum = &audit.summability;
    let converged = trace.status == Status::Converged;
    out.insert(
        5,
        verdict(
            sum.step_sq_ok && (!converged || sum.stabilized),
            format!(
                "sum |s|^2 = {:.3e} <= {:.3e}; last-quarter growth {:.2e} (model gradient)",
                sum.sums.step_sq, sum.step_sq_bound, sum.last_quarter_growth.model_grad
            ),
        ),
    );

    let certified =
        matches!(algorithm, AlgorithmName::Alg2 | AlgorithmName::Gradient) && p.convexity() != Convexity::Unknown;
    if let (true, Some(y)) = (certified, p.minimizer()) {
        let f_y = p.eval_f(y)?;
        let tol = certificate_tolerance(&trace.x0, y);
        let c6 = match build_certificates(trace, y, f_y) {
            Ok(certs) if certs.is_empty() => verdict(true, "no iterations"),
            Ok(certs) => {
                let slack = min_slack(&certs);
                verdict(slack >= -tol, format!("min slack {slack:.3e}, tolerance {tol:.1e}"))
            }
            Err(e) => verdict(false, e.to_string()),
        };
        out.insert(6, c6);
        let radius = check_radius(trace, y, RADIUS_TOL)?;
        let tail = tail_report(trace, Some(y));
        out.insert(
            7,
            verdict(
                radius.passed() && tail.passed(FINAL_ERROR_TOL, TAIL_TOL),
                format!(
                    "radius bound {}, final error {:.2e}, tail distance {:.2e}",
                    if radius.passed() { "holds" } else { "violated" },
                    tail.final_error.unwrap_or(f64::NAN),
                    tail.tail_sup
                ),
            ),
        );
    }

    if algorithm == AlgorithmName::Alg2 && p.convexity() == Convexity::Pseudoconvex {
        if let Some(y) = p.minimizer() {
            let dist = (&trace.final_x - y).norm();
            out.insert(
                8,
                verdict(
                    trace.final_grad_norm <= STATIONARY_TOL && dist <= MINIMIZER_TOL,
                    format!("|grad f| = {:.2e}, |x - x*| = {dist:.2e}", trace.final_grad_norm),
                ),
            );
        }
    }

    if algorithm == AlgorithmName::Alg2 && p.convexity() == Convexity::Convex {
        if let (Some(y), Some(f_star)) = (p.minimizer(), p.f_star()) {
            let radius = check_radius(trace, y, RADIUS_TOL)?;
            let rate = rate_check(trace, Some(f_star), p.convexity(), radius.r_hat, RATE_TOL)?;
            out.insert(
                9,
                verdict(
                    rate.passed,
                    format!(
                        "max excess {:.3e}, max k(f_k - f*) {:.3e} <= {:.3e}",
                        rate.max_excess, rate.max_scaled_gap, rate.scaled_gap_bound
                    ),
                ),
            );
        }
    }

    if algorithm == AlgorithmName::Gradient {
        let alpha = run.spec.alpha.expect("gradient runs record alpha");
        let mut worst: f64 = 0.0;
        let mut rejected = None;
        for (k, rec) in trace.records.iter().enumerate() {
            if !rec.accepted {
                rejected.get_or_insert(k);
            }
            let expected = &rec.x - p.eval_grad(&rec.x)? * alpha;
            worst = worst.max((trace.next_x(k) - expected).amax());
        }
        out.insert(
            10,
            match rejected {
                Some(k) => verdict(false, format!("step {k} rejected")),
                None => verdict(worst <= EMBEDDING_TOL, format!("max deviation {worst:.2e}")),
            },
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(GRADIENT_CHECK_SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        worst = worst.max(p.check_gradient(&p.random_point(&mut rng), 1e-6)?);
    }
    out.insert(
        11,
        verdict(worst <= GRADIENT_CHECK_TOL, format!("worst relative error {worst:.2e}")),
    );
    Ok(out)
}

fn failed_row(name: String, error: &Failure) -> RowReport {
    RowReport {
        name,
        ok: false,
        error: Some(error.to_string()),
        status: None,
        iterations: None,
        criteria: BTreeMap::new(),
    }
}

fn evaluate_row(name: String, opts: Result<RunOptions, Failure>, dir: &Path) -> RowReport {
    let outcome = opts.and_then(|opts| {
        let run = PreparedRun::resolve(&opts)?;
        let (trace, _) = cmd_run(&run, dir)?;
        let criteria = criteria_for(&run, &trace)?;
        Ok((trace, criteria))
    });
    match outcome {
        Ok((trace, criteria)) => RowReport {
            name,
            ok: true,
            error: None,
            status: Some(trace.status),
            iterations: Some(trace.iterations()),
            criteria,
        },
        Err(e) => failed_row(name, &e),
    }
}

/// Runs every row of the matrix (in parallel), writing each run into
/// `out_dir/<name>/` and the aggregate report into `out_dir/suite.json`.
pub fn run_suite(matrix_text: &str, out_dir: &Path) -> Result<SuiteReport, Failure> {
    let rows = parse_matrix(matrix_text)?;
    let mut seen = BTreeMap::new();
    let jobs: Vec<(String, Result<RunOptions, Failure>, PathBuf)> = rows
        .into_iter()
        .map(|(name, opts)| {
            let count = seen.entry(name.clone()).or_insert(0usize);
            *count += 1;
            let opts = if !is_safe_name(&name) {
                Err(Failure::Usage(format!(
                    "row name `{name}` must use letters, digits and -_.="
                )))
            } else if *count > 1 {
                Err(Failure::Usage(format!("duplicate row name `{name}`")))
            } else {
                opts
            };
            let dir = out_dir.join(&name);
            (name, opts, dir)
        })
        .collect();

    let runs: Vec<RowReport> = jobs
        .into_par_iter()
        .map(|(name, opts, dir)| evaluate_row(name, opts, &dir))
        .collect();

    let mut criteria: BTreeMap<u32, CriterionTotal> = BTreeMap::new();
    for row in &runs {
        for (&id, result) in &row.criteria {
            let total = criteria.entry(id).or_insert(CriterionTotal {
                passed: true,
                runs: 0,
                failed_runs: Vec::new(),
            });
            total.runs += 1;
            if !result.passed {
                total.passed = false;
                total.failed_runs.push(row.name.clone());
            }
        }
    }
    let failed_rows: Vec<String> = runs.iter().filter(|r| !r.ok).map(|r| r.name.clone()).collect();
    let report = SuiteReport {
        passed: failed_rows.is_empty() && criteria.values().all(|c| c.passed),
        rows: runs.len(),
        failed_rows,
        criteria,
        runs,
    };
    write_file(&out_dir.join("suite.json"), to_json(&report)?)?;
    Ok(report)
}

pub fn cmd_suite(matrix_path: &Path, out_dir: &Path) -> Result<SuiteReport, Failure> {
    run_suite(&read_file(matrix_path)?, out_dir)
}
