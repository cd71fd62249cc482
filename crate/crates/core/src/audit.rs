//! Per-run invariant checks, recomputed from the trace and the problem rather
//! than trusted from the solver's own bookkeeping.

use serde::Serialize;

use crate::driver::Trace;
use crate::error::Result;
use crate::fejer::{gradient_step_factor, summability_report, SummabilityReport};
use crate::model::ModelState;
use crate::problems::ProblemInstance;

/// Outcome of one inequality checked at every relevant iteration.
/// `worst_margin` is the smallest `rhs - lhs + slack` seen; negative means
/// the check failed there.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub passed: bool,
    pub worst_margin: f64,
    pub worst_k: Option<usize>,
    pub checked: usize,
}

impl Check {
    fn new() -> Self {
        Self {
            passed: true,
            worst_margin: f64::INFINITY,
            worst_k: None,
            checked: 0,
        }
    }

    fn record(&mut self, k: usize, margin: f64) {
        self.checked += 1;
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.worst_k = Some(k);
        }
        if !(margin >= 0.0) {
            self.passed = false;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunAudit {
    /// `|grad m_k(s_k)| <= tau |s_k| min(|s_k|, 1) + 1e-12`.
    pub inexactness: Check,
    /// `m_k(0) - m_k(s_k) >= c |s_k|^2 - 1e-10 (1 + |f_k|)`.
    pub model_decrease: Check,
    /// `f_k - f_{k+1} >= eta c |s_k|^2 - 1e-10 (1 + |f_k|)` at accepted k.
    pub objective_decrease: Check,
    /// `f_{k+1} <= f_k` exactly.
    pub monotone: Check,
    /// Rejected iterations keep the iterate; accepted ones move to `x_k + s_k`.
    pub consistency: Check,
    /// `|grad f(x_k)| <= (tau + b + sigma_max T^{r-2}) |s_k| + 1e-8` at accepted k.
    pub gradient_bound: Check,
    pub summability: SummabilityReport,
}

impl RunAudit {
    /// Everything except the stabilization of partial sums, which only
    /// applies to converged runs.
    pub fn core_passed(&self) -> bool {
        self.inexactness.passed
            && self.model_decrease.passed
            && self.objective_decrease.passed
            && self.monotone.passed
            && self.consistency.passed
            && self.gradient_bound.passed
            && self.summability.step_sq_ok
    }
}

pub const INEXACTNESS_SLACK: f64 = 1e-12;
pub const DECREASE_SLACK: f64 = 1e-10;
pub const GRADIENT_BOUND_SLACK: f64 = 1e-8;

pub fn audit_run(p: &ProblemInstance, trace: &Trace) -> Result<RunAudit> {
    let cfg = &trace.config;
    let c = trace.decrease_constant();
    let factor = gradient_step_factor(trace);

    let mut inexactness = Check::new();
    let mut model_decrease = Check::new();
    let mut objective_decrease = Check::new();
    let mut monotone = Check::new();
    let mut consistency = Check::new();
    let mut gradient_bound = Check::new();

    for (k, rec) in trace.records.iter().enumerate() {
        let g = p.eval_grad(&rec.x)?;
        let f = p.eval_f(&rec.x)?;
        let st = ModelState::new(rec.x.clone(), f, g.clone(), trace.metrics[k].clone(), rec.sigma, cfg.r)?;
        let s_norm = rec.s.norm();
        let model_grad = st.gradient(&rec.s)?.norm();
        inexactness.record(
            k,
            ModelState::stopping_bound(s_norm, cfg.tau) + INEXACTNESS_SLACK - model_grad,
        );

        let scale = DECREASE_SLACK * (1.0 + f.abs());
        model_decrease.record(k, st.decrease(&rec.s)? - c * s_norm * s_norm + scale);

        let f_next = trace.next_f(k);
        monotone.record(k, f - f_next);

        let x_next = trace.next_x(k);
        let expected = if rec.accepted { &rec.x + &rec.s } else { rec.x.clone() };
        consistency.record(k, if *x_next == expected && rec.f_x == f { 0.0 } else { -1.0 });

        if rec.accepted {
            objective_decrease.record(k, f - f_next - cfg.eta * c * s_norm * s_norm + scale);
            gradient_bound.record(k, factor * s_norm + GRADIENT_BOUND_SLACK - g.norm());
        }
    }

    Ok(RunAudit {
        inexactness,
        model_decrease,
        objective_decrease,
        monotone,
        consistency,
        gradient_bound,
        summability: summability_report(trace),
    })
}
