//! Post-hoc certification of a finished trace: the per-iteration
//! variable-metric quasi-Fejér inequality
//!
//! ```text
//! |x_{k+1} - y|^2_{Q_{k+1}} <= (1 + psi_k) |x_k - y|^2_{Q_k} + theta_k |x_k - y| + eps_k
//! ```
//!
//! with `eps_k = (1 + psi_k) |s_k|^2_{Q_k}` and
//! `theta_k = 2 (1 + psi_k) (|grad m_k(s_k)| + sigma_k |s_k|^{r-1})` on accepted
//! iterations (both zero otherwise), plus the radius, summability, rate and
//! tail checks built on it.

use nalgebra::DVector;
use serde::Serialize;

use crate::driver::Trace;
use crate::error::{check_dim, Error, Result};
use crate::model::norm_pow;
use crate::problems::Convexity;

/// Default certificate tolerance `1e-8 (1 + |x0 - y|^2)`.
pub fn certificate_tolerance(x0: &DVector<f64>, y: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + (x0 - y).norm_squared())
}

#[derive(Debug, Clone, Serialize)]
pub struct FejerCertificate {
    pub k: usize,
    pub psi: f64,
    pub theta: f64,
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// `|x_k - y|`.
    pub dist: f64,
    /// Running sums up to and including `k`.
    pub sum_theta: f64,
    pub sum_eps: f64,
}

/// `(theta_k, eps_k)` for every iteration. Neither depends on the reference point.
pub fn certificate_sequences(trace: &Trace) -> Vec<(f64, f64)> {
    trace
        .records
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            if !rec.accepted {
                return (0.0, 0.0);
            }
            let inflate = 1.0 + trace.psi[k];
            let sigma_term = rec.sigma * norm_pow(rec.s_norm, trace.config.r - 1.0);
            let theta = 2.0 * inflate * (rec.model_grad_norm + sigma_term);
            let eps = inflate * trace.metrics[k].quad_form(&rec.s);
            (theta, eps)
        })
        .collect()
}

/// Checks that `y` lies in `{x : f(x) <= f_final}` up to `1e-12 (1 + |f_final|)`.
pub fn check_target_set(trace: &Trace, f_y: f64) -> Result<()> {
    let f_final = trace.final_f;
    if f_y.is_finite() && f_y <= f_final + 1e-12 * (1.0 + f_final.abs()) {
        Ok(())
    } else {
        Err(Error::NotInTargetSet { f_y, f_final })
    }
}

/// One certificate per iteration, for a reference point `y` with value `f_y`.
pub fn build_certificates(trace: &Trace, y: &DVector<f64>, f_y: f64) -> Result<Vec<FejerCertificate>> {
    check_dim(trace.x0.len(), y.len())?;
    check_target_set(trace, f_y)?;
    let mut sum_theta = 0.0;
    let mut sum_eps = 0.0;
    let seqs = certificate_sequences(trace);
    let mut out = Vec::with_capacity(trace.records.len());
    for (k, (rec, &(theta, eps))) in trace.records.iter().zip(&seqs).enumerate() {
        let d = &rec.x - y;
        let d_next = trace.next_x(k) - y;
        let psi = trace.psi[k];
        let dist = d.norm();
        let lhs = trace.metrics[k + 1].quad_form(&d_next);
        let rhs = (1.0 + psi) * trace.metrics[k].quad_form(&d) + theta * dist + eps;
        sum_theta += theta;
        sum_eps += eps;
        out.push(FejerCertificate {
            k,
            psi,
            theta,
            eps,
            lhs,
            rhs,
            slack: rhs - lhs,
            dist,
            sum_theta,
            sum_eps,
        });
    }
    Ok(out)
}

pub fn min_slack(certs: &[FejerCertificate]) -> f64 {
    certs.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusEntry {
    pub k: usize,
    /// `a |x_k - y|^2`.
    pub lhs: f64,
    /// Running bound on `|x_k - y|^2_{Q_k}`.
    pub bound: f64,
    /// The same recursion with `theta` dropped.
    pub plain_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusReport {
    pub entries: Vec<RadiusEntry>,
    /// Implied bound on `|x_k - y|` over the observed range.
    pub r_hat: f64,
    pub max_dist: f64,
    pub max_iterate_norm: f64,
    pub tol: f64,
    /// `a |x_k - y|^2 <= bound_k + tol` for all k.
    pub bound_ok: bool,
    /// Same check against the recursion without the `theta` terms.
    pub plain_bound_ok: bool,
    /// `max_k |x_k| <= |y| + r_hat + tol`.
    pub bounded_ok: bool,
}

impl RadiusReport {
    pub fn passed(&self) -> bool {
        self.bound_ok && self.bounded_ok
    }
}

/// Finite-horizon radius check anchored at `x_0`.
///
/// The `theta |x_k - y|` term is folded into the other two sequences through
/// `theta |d| <= theta (1 + |d|^2) <= theta + (theta / a) |d|^2_Q`, giving
/// `D_{k+1} <= (1 + psi_k + theta_k / a) D_k + eps_k + theta_k` for
/// `D_k = |x_k - y|^2_{Q_k}`, and hence
/// `a |x_k - y|^2 <= D_k <= prod_{i<k} (1 + psi'_i) (D_0 + sum_{i<k} eps'_i)`.
pub fn check_radius(trace: &Trace, y: &DVector<f64>, tol: f64) -> Result<RadiusReport> {
    check_dim(trace.x0.len(), y.len())?;
    let a = trace.a;
    let seqs = certificate_sequences(trace);
    let d0 = trace.metrics[0].quad_form(&(&trace.x0 - y));

    let mut zeta = 1.0;
    let mut sum_eps = 0.0;
    let mut plain_zeta = 1.0;
    let mut plain_sum = 0.0;
    let mut entries = Vec::with_capacity(trace.records.len() + 1);
    let mut max_dist = 0.0_f64;
    let mut max_norm = 0.0_f64;
    for (k, x) in trace.iterates().enumerate() {
        if k > 0 {
            let (theta, eps) = seqs[k - 1];
            let psi = trace.psi[k - 1];
            zeta *= 1.0 + psi + theta / a;
            sum_eps += eps + theta;
            plain_zeta *= 1.0 + psi;
            plain_sum += eps;
        }
        let dist = (x - y).norm();
        max_dist = max_dist.max(dist);
        max_norm = max_norm.max(x.norm());
        entries.push(RadiusEntry {
            k,
            lhs: a * dist * dist,
            bound: zeta * (d0 + sum_eps),
            plain_bound: plain_zeta * (d0 + plain_sum),
        });
    }
    let final_bound = entries.last().map_or(d0, |e| e.bound);
    let r_hat = (final_bound / a).sqrt();
    Ok(RadiusReport {
        bound_ok: entries.iter().all(|e| e.lhs <= e.bound + tol),
        plain_bound_ok: entries.iter().all(|e| e.lhs <= e.plain_bound + tol),
        bounded_ok: max_norm <= y.norm() + r_hat + tol,
        entries,
        r_hat,
        max_dist,
        max_iterate_norm: max_norm,
        tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialSums {
    /// `sum |s_k|^2` over accepted k.
    pub step_sq: f64,
    /// `sum |s_k|^{r-1}` over accepted k.
    pub step_pow: f64,
    pub model_grad: f64,
    pub theta: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummabilityReport {
    pub accepted: usize,
    pub sums: PartialSums,
    /// `(f(x_0) - f_final) / (eta c)`.
    pub step_sq_bound: f64,
    /// Final sum within `bound (1 + 1e-8)` and every partial sum within
    /// `bound_K (1 + 1e-8) + 1e-8`.
    pub step_sq_ok: bool,
    /// Share of each total added during the last quarter of iterations.
    pub last_quarter_growth: PartialSums,
    /// Growth of the model-gradient, step-power, theta and eps sums within 1%.
    pub stabilized: bool,
    /// `|grad m_k(s_k)| <= tau |s_k|^2 + slack` at accepted k with `|s_k| <= 1`.
    pub model_grad_ok: bool,
}

pub const STABILIZATION_SHARE: f64 = 0.01;

/// Partial sums over accepted iterations and the step-summability bound.
pub fn summability_report(trace: &Trace) -> SummabilityReport {
    let eta = trace.config.eta;
    let c = trace.decrease_constant();
    let r = trace.config.r;
    let f0 = trace.f0();
    let seqs = certificate_sequences(trace);
    let n = trace.records.len();
    let quarter_start = n - n / 4;

    let zero = || PartialSums {
        step_sq: 0.0,
        step_pow: 0.0,
        model_grad: 0.0,
        theta: 0.0,
        eps: 0.0,
    };
    let mut sums = zero();
    let mut at_quarter = zero();
    let mut accepted = 0;
    let mut partial_ok = true;
    let mut model_grad_ok = true;
    for (k, rec) in trace.records.iter().enumerate() {
        if k == quarter_start {
            at_quarter = sums.clone();
        }
        if !rec.accepted {
            continue;
        }
        accepted += 1;
        sums.step_sq += rec.s_norm * rec.s_norm;
        sums.step_pow += norm_pow(rec.s_norm, r - 1.0);
        sums.model_grad += rec.model_grad_norm;
        sums.theta += seqs[k].0;
        sums.eps += seqs[k].1;
        let bound_k = (f0 - trace.next_f(k)) / (eta * c);
        partial_ok &= sums.step_sq <= bound_k * (1.0 + 1e-8) + 1e-8;
        if rec.s_norm <= 1.0 {
            model_grad_ok &=
                rec.model_grad_norm <= trace.config.tau * rec.s_norm * rec.s_norm + trace.config.residual_slack;
        }
    }
    if quarter_start >= n {
        at_quarter = sums.clone();
    }
    let share = |total: f64, before: f64| if total > 0.0 { (total - before) / total } else { 0.0 };
    let growth = PartialSums {
        step_sq: share(sums.step_sq, at_quarter.step_sq),
        step_pow: share(sums.step_pow, at_quarter.step_pow),
        model_grad: share(sums.model_grad, at_quarter.model_grad),
        theta: share(sums.theta, at_quarter.theta),
        eps: share(sums.eps, at_quarter.eps),
    };
    let step_sq_bound = (f0 - trace.final_f) / (eta * c);
    SummabilityReport {
        accepted,
        step_sq_ok: partial_ok && sums.step_sq <= step_sq_bound * (1.0 + 1e-8),
        stabilized: [growth.model_grad, growth.step_pow, growth.theta, growth.eps]
            .iter()
            .all(|&g| g <= STABILIZATION_SHARE),
        last_quarter_growth: growth,
        step_sq_bound,
        sums,
        model_grad_ok,
    }
}

/// `max_k |Q_k|` over the iterations of the trace.
pub fn metric_norm_bound(trace: &Trace) -> f64 {
    let used = trace.records.len().max(1);
    trace.metrics[..used].iter().map(|q| q.norm()).fold(0.0, f64::max)
}

/// Largest accepted step length.
pub fn max_accepted_step(trace: &Trace) -> f64 {
    trace
        .records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.s_norm)
        .fold(0.0, f64::max)
}

/// `tau + b + sigma_max T^{r-2}`: the factor bounding `|grad f(x_k)|` by `|s_k|`.
pub fn gradient_step_factor(trace: &Trace) -> f64 {
    let cfg = &trace.config;
    cfg.tau + metric_norm_bound(trace) + cfg.sigma_max * norm_pow(max_accepted_step(trace), cfg.r - 2.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub nu_hat: f64,
    pub r_hat: f64,
    pub b_hat: f64,
    pub t_hat: f64,
    pub delta0: f64,
    /// `max_k (f_k - f*) - bound_k` over `k >= 1`.
    pub max_excess: f64,
    /// `max_k k (f_k - f*)`, to compare with `r_hat^2 / nu_hat`.
    pub max_scaled_gap: f64,
    pub scaled_gap_bound: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `f(x_k) - f* <= R^2 D0 / (R^2 + nu k D0)` with measured constants.
pub fn rate_check(
    trace: &Trace,
    f_star: Option<f64>,
    convexity: Convexity,
    r_hat: f64,
    tol: f64,
) -> Result<RateReport> {
    let f_star = f_star.ok_or_else(|| Error::Precondition("the rate check needs the optimal value".into()))?;
    if convexity != Convexity::Convex {
        return Err(Error::Precondition(format!(
            "the rate check applies to convex problems only (problem class {convexity:?})"
        )));
    }
    let cfg = &trace.config;
    let b_hat = metric_norm_bound(trace);
    let t_hat = max_accepted_step(trace);
    let factor = gradient_step_factor(trace);
    let nu_hat = cfg.eta * trace.decrease_constant() / (factor * factor);
    let delta0 = trace.f0() - f_star;
    let r2 = r_hat * r_hat;

    let mut max_excess = f64::NEG_INFINITY;
    let mut max_scaled_gap = 0.0_f64;
    for (k, f) in trace.values().enumerate().skip(1) {
        let gap = f - f_star;
        let kf = k as f64;
        let bound = if delta0 > 0.0 {
            r2 * delta0 / (r2 + nu_hat * kf * delta0)
        } else {
            0.0
        };
        max_excess = max_excess.max(gap - bound);
        max_scaled_gap = max_scaled_gap.max(kf * gap);
    }
    let scaled_gap_bound = r2 / nu_hat;
    Ok(RateReport {
        passed: max_excess <= tol && max_scaled_gap <= scaled_gap_bound + tol * trace.records.len() as f64,
        nu_hat,
        r_hat,
        b_hat,
        t_hat,
        delta0,
        max_excess,
        max_scaled_gap,
        scaled_gap_bound,
        tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    /// `|x_final - x*|` when a minimizer is known.
    pub final_error: Option<f64>,
    /// First index of the last 10% of iterates.
    pub tail_start: usize,
    /// `max_{k >= tail_start} |x_k - x_final|`.
    pub tail_sup: f64,
    /// `sup_{j >= k} |x_j - x_final|` for every k; non-increasing by construction.
    pub sup_profile: Vec<f64>,
}

impl TailReport {
    pub fn passed(&self, final_tol: f64, tail_tol: f64) -> bool {
        self.final_error.is_none_or(|e| e <= final_tol) && self.tail_sup <= tail_tol
    }
}

/// Distance of the late iterates to the final one.
pub fn tail_report(trace: &Trace, minimizer: Option<&DVector<f64>>) -> TailReport {
    let dists: Vec<f64> = trace.iterates().map(|x| (x - &trace.final_x).norm()).collect();
    let mut sup_profile = dists.clone();
    for k in (0..sup_profile.len().saturating_sub(1)).rev() {
        sup_profile[k] = sup_profile[k].max(sup_profile[k + 1]);
    }
    let total = dists.len();
    let tail_start = total - (total / 10).max(1);
    TailReport {
        final_error: minimizer.map(|m| (&trace.final_x - m).norm()),
        tail_start,
        tail_sup: sup_profile[tail_start],
        sup_profile,
    }
}
