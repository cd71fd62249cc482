//! `run`, `certify`, `rate` and `problems list`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use regmin::fejer::{
    build_certificates, certificate_tolerance, check_radius, gradient_step_factor, max_accepted_step,
    metric_norm_bound, min_slack, rate_check, summability_report, PartialSums,
};
use regmin::problems::catalog_names;
use regmin::{ProblemInstance, Status, Trace};

use crate::options::PreparedRun;
use crate::trace_io::{fmt_float, load_trace, save_trace};
use crate::{to_json, write_file, Failure};

/// Tolerance of the radius bound, matching the certificate default.
pub const RADIUS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: Status,
    pub iters: usize,
    pub f_final: f64,
    pub gnorm_final: f64,
    pub problem: String,
}

impl RunSummary {
    pub fn of(trace: &Trace) -> Self {
        Self {
            status: trace.status,
            iters: trace.iterations(),
            f_final: trace.final_f,
            gnorm_final: trace.final_grad_norm,
            problem: trace.problem.clone(),
        }
    }
}

/// Runs the solver and writes `trace.csv`, `trace.json`, `summary.json` and
/// `spec.json` into `out_dir`.
pub fn cmd_run(run: &PreparedRun, out_dir: &Path) -> Result<(Trace, RunSummary), Failure> {
    let trace = run.execute()?;
    save_trace(&trace, &out_dir.join("trace.csv"))?;
    let summary = RunSummary::of(&trace);
    write_file(&out_dir.join("summary.json"), to_json(&summary)?)?;
    write_file(&out_dir.join("spec.json"), to_json(&run.spec)?)?;
    Ok((trace, summary))
}

/// Where the reference point of a certificate comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PointSource {
    Minimizer,
    Final,
    Explicit(Vec<f64>),
}

impl std::str::FromStr for PointSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "minimizer" => Ok(Self::Minimizer),
            "final" => Ok(Self::Final),
            other => other
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
                .collect::<Result<Vec<_>, _>>()
                .map(Self::Explicit)
                .map_err(|e| format!("expected `minimizer`, `final` or comma-separated numbers ({e})")),
        }
    }
}

impl PointSource {
    fn resolve(&self, problem: &ProblemInstance, trace: &Trace) -> Result<DVector<f64>, Failure> {
        let y = match self {
            PointSource::Minimizer => problem
                .minimizer()
                .cloned()
                .ok_or_else(|| Failure::Usage(format!("problem `{}` has no known minimizer", problem.name())))?,
            PointSource::Final => trace.final_x.clone(),
            PointSource::Explicit(v) => DVector::from_column_slice(v),
        };
        if y.len() != problem.dim() || y.iter().any(|v| !v.is_finite()) {
            return Err(Failure::Usage(format!(
                "reference point must be {} finite numbers",
                problem.dim()
            )));
        }
        Ok(y)
    }

    fn default_for(problem: &ProblemInstance) -> Self {
        if problem.minimizer().is_some() {
            PointSource::Minimizer
        } else {
            PointSource::Final
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    pub nu_hat: f64,
    pub b_hat: f64,
    #[serde(rename = "T_hat")]
    pub t_hat: f64,
    /// `None` for an empty trace.
    pub min_slack: Option<f64>,
    pub sums: PartialSums,
    pub iterations: usize,
    pub y: Vec<f64>,
    pub f_y: f64,
    pub tol: f64,
    pub radius_ok: bool,
    pub plain_radius_ok: bool,
    pub passed: bool,
}

/// Certifies a saved trace against `y`: writes `certificate.csv` and
/// `certificate.json`. Fails with the certification class when a slack or the
/// radius bound is violated.
pub fn cmd_certify(
    trace_path: &Path,
    y: Option<PointSource>,
    tol: Option<f64>,
    out_dir: &Path,
) -> Result<CertificateSummary, Failure> {
    let trace = load_trace(trace_path)?;
    let problem = ProblemInstance::by_name(&trace.problem)?;
    let y = y
        .unwrap_or_else(|| PointSource::default_for(&problem))
        .resolve(&problem, &trace)?;
    let f_y = problem.eval_f(&y)?;
    let certs = build_certificates(&trace, &y, f_y)?;
    let tol = tol.unwrap_or_else(|| certificate_tolerance(&trace.x0, &y));
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Failure::Usage(format!(
            "tolerance {tol} must be finite and nonnegative"
        )));
    }
    let radius = check_radius(&trace, &y, RADIUS_TOL)?;

    let mut csv = String::from("k,psi,theta,eps,lhs,rhs,slack\n");
    for c in &certs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            c.k,
            fmt_float(c.psi),
            fmt_float(c.theta),
            fmt_float(c.eps),
            fmt_float(c.lhs),
            fmt_float(c.rhs),
            fmt_float(c.slack)
        );
    }
    write_file(&out_dir.join("certificate.csv"), csv)?;

    let factor = gradient_step_factor(&trace);
    let slack = (!certs.is_empty()).then(|| min_slack(&certs));
    let slack_ok = slack.is_none_or(|s| s >= -tol);
    let summary = CertificateSummary {
        r_hat: radius.r_hat,
        nu_hat: trace.config.eta * trace.decrease_constant() / (factor * factor),
        b_hat: metric_norm_bound(&trace),
        t_hat: max_accepted_step(&trace),
        min_slack: slack,
        sums: summability_report(&trace).sums,
        iterations: trace.iterations(),
        y: y.iter().copied().collect(),
        f_y,
        tol,
        radius_ok: radius.passed(),
        plain_radius_ok: radius.plain_bound_ok,
        passed: slack_ok && radius.passed(),
    };
    write_file(&out_dir.join("certificate.json"), to_json(&summary)?)?;
    if !slack_ok {
        return Err(Failure::Certification(format!(
            "certificate slack {:.3e} below -{tol:.1e}",
            slack.unwrap_or(f64::NAN)
        )));
    }
    if !radius.passed() {
        return Err(Failure::Certification("radius bound violated".into()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSummary {
    #[serde(flatten)]
    pub report: regmin::fejer::RateReport,
    pub f_star: f64,
    pub iterations: usize,
}

/// Checks `f_k - f* <= R^2 D0 / (R^2 + nu k D0)` on a saved trace; writes
/// `rate.csv` (`k,gap,bound,scaled_gap`) and `rate.json`.
pub fn cmd_rate(
    trace_path: &Path,
    f_star: Option<f64>,
    y: Option<PointSource>,
    tol: f64,
    out_dir: &Path,
) -> Result<RateSummary, Failure> {
    let trace = load_trace(trace_path)?;
    let problem = ProblemInstance::by_name(&trace.problem)?;
    let f_star = f_star.or(problem.f_star()).ok_or_else(|| {
        Failure::Usage(format!(
            "problem `{}` has no known optimal value; pass --f-star",
            problem.name()
        ))
    })?;
    let y = y
        .unwrap_or_else(|| PointSource::default_for(&problem))
        .resolve(&problem, &trace)?;
    let radius = check_radius(&trace, &y, RADIUS_TOL)?;
    let report = rate_check(&trace, Some(f_star), problem.convexity(), radius.r_hat, tol)?;

    let r2 = report.r_hat * report.r_hat;
    let mut csv = String::from("k,gap,bound,scaled_gap\n");
    for (k, f) in trace.values().enumerate() {
        let gap = f - f_star;
        let kf = k as f64;
        let bound = if report.delta0 > 0.0 {
            r2 * report.delta0 / (r2 + report.nu_hat * kf * report.delta0)
        } else {
            0.0
        };
        let _ = writeln!(
            csv,
            "{k},{},{},{}",
            fmt_float(gap),
            fmt_float(bound),
            fmt_float(kf * gap)
        );
    }
    write_file(&out_dir.join("rate.csv"), csv)?;
    let summary = RateSummary {
        report,
        f_star,
        iterations: trace.iterations(),
    };
    write_file(&out_dir.join("rate.json"), to_json(&summary)?)?;
    if !summary.report.passed {
        return Err(Failure::Certification(format!(
            "rate bound violated: max excess {:.3e}, max k(f_k - f*) {:.3e} vs {:.3e}",
            summary.report.max_excess, summary.report.max_scaled_gap, summary.report.scaled_gap_bound
        )));
    }
    Ok(summary)
}

/// Table of catalog problems.
pub fn problems_table() -> Result<String, Failure> {
    let mut out = format!(
        "{:<16} {:>4}  {:<13} {:>12}  {:<14} {}\n",
        "name", "dim", "class", "L", "L source", "minimizer"
    );
    for name in catalog_names() {
        let p = ProblemInstance::by_name(name)?;
        let (l, source) = match p.lipschitz() {
            Some(l) => (format!("{:.6}", l.value), format!("{:?}", l.source)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "{:<16} {:>4}  {:<13} {:>12}  {:<14} {}",
            name,
            p.dim(),
            format!("{:?}", p.convexity()).to_lowercase(),
            l,
            source,
            if p.minimizer().is_some() { "known" } else { "-" }
        );
    }
    out.push_str(
        "\nfamilies: quad-d{n}[-k{c}], dquad-d{n}-k{c}, lsq-m{m}-d{n}, lse-d{n}, ratio-d{n}, quartic-d{n}, logistic\n",
    );
    Ok(out)
}

/// Default output directory of `certify` and `rate`: next to the trace.
pub fn trace_dir(trace_path: &Path) -> PathBuf {
    trace_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_sources_parse() {
        assert_eq!("minimizer".parse::<PointSource>().unwrap(), PointSource::Minimizer);
        assert_eq!("final".parse::<PointSource>().unwrap(), PointSource::Final);
        assert_eq!(
            "1, -2.5".parse::<PointSource>().unwrap(),
            PointSource::Explicit(vec![1.0, -2.5])
        );
        assert!("1,x".parse::<PointSource>().is_err());
    }

    #[test]
    fn table_lists_every_catalog_problem() {
        let table = problems_table().unwrap();
        for name in catalog_names() {
            assert!(table.contains(name));
        }
    }
}
