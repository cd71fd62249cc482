//! Outer loops: the general accept/reject scheme, the always-accept variant,
//! the regularization-weight schedule and the gradient-method embedding.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Metric;
use crate::metric_policy::{MetricPolicy, PolicyKind};
use crate::model::ModelState;
use crate::problems::ProblemInstance;
use crate::subsolver::{solve_descent, solve_secular, SubsolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaRule {
    Constant {
        value: f64,
    },
    /// Multiply by `increase` on rejection and by `decrease` on acceptance.
    Adaptive {
        increase: f64,
        decrease: f64,
        initial: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// `(f_k - f_trial) / (m(0) - m(s)) >= eta`.
    RatioModel,
    /// `(f_k - f_trial) / (q(0) - q(s)) >= eta`.
    RatioQuadratic,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsolverChoice {
    Secular,
    Descent { max_inner: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// General scheme with accept/reject.
    General,
    /// Every trial step accepted, under the strengthened floor.
    AlwaysAccept,
    /// General scheme with the gradient-method parameters.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub r: f64,
    pub tau: f64,
    pub eta: f64,
    pub sigma_max: f64,
    pub sigma_rule: SigmaRule,
    pub acceptance: AcceptanceRule,
    /// Stop once `|grad f| <= grad_tol`; `None` means `1e-8 (1 + |grad f(x0)|)`.
    pub grad_tol: Option<f64>,
    pub max_iters: usize,
    /// Consecutive rejections without room to raise sigma before a stall.
    pub patience: usize,
    pub subsolver: SubsolverChoice,
    /// Relative model-gradient tolerance of the secular solver.
    pub secular_tol: f64,
    /// Absolute slack added to the inexactness test, covering rounding in the
    /// model gradient of an exact step.
    pub residual_slack: f64,
    /// Ratio denominators at or below this value are rejected and flagged.
    pub min_denominator: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            r: 3.0,
            tau: 0.0,
            eta: 0.1,
            sigma_max: 1e16,
            sigma_rule: SigmaRule::Adaptive {
                increase: 2.0,
                decrease: 0.5,
                initial: 1.0,
            },
            acceptance: AcceptanceRule::RatioModel,
            grad_tol: None,
            max_iters: 10_000,
            patience: 50,
            subsolver: SubsolverChoice::Secular,
            secular_tol: 1e-12,
            residual_slack: 1e-12,
            min_denominator: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.r >= 3.0 && self.r.is_finite()) {
            return bad(format!("r = {} must be finite and >= 3", self.r));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be finite and >= 0", self.tau));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return bad(format!("sigma_max = {} must be finite and >= 0", self.sigma_max));
        }
        match self.sigma_rule {
            SigmaRule::Constant { value } => {
                if !(0.0..=self.sigma_max).contains(&value) {
                    return bad(format!(
                        "constant sigma {value} outside [0, sigma_max = {}]",
                        self.sigma_max
                    ));
                }
            }
            SigmaRule::Adaptive {
                increase,
                decrease,
                initial,
            } => {
                if !(increase >= 1.0 && increase.is_finite()) {
                    return bad(format!("sigma increase factor {increase} must be >= 1"));
                }
                if !(decrease > 0.0 && decrease <= 1.0) {
                    return bad(format!("sigma decrease factor {decrease} must lie in (0, 1]"));
                }
                if !(0.0..=self.sigma_max).contains(&initial) {
                    return bad(format!(
                        "initial sigma {initial} outside [0, sigma_max = {}]",
                        self.sigma_max
                    ));
                }
            }
        }
        if let Some(tol) = self.grad_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return bad(format!("grad_tol = {tol} must be positive"));
            }
        }
        if let SubsolverChoice::Descent { max_inner } = self.subsolver {
            if self.tau == 0.0 {
                return bad("the descent subsolver needs tau > 0; tau = 0 demands the secular method".into());
            }
            if max_inner == 0 {
                return bad("max_inner must be positive".into());
            }
        }
        if !(self.secular_tol > 0.0 && self.residual_slack >= 0.0 && self.min_denominator >= 0.0) {
            return bad("secular_tol must be positive; residual_slack and min_denominator nonnegative".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        Ok(())
    }

    fn initial_sigma(&self) -> f64 {
        match self.sigma_rule {
            SigmaRule::Constant { value } => value,
            SigmaRule::Adaptive { initial, .. } => initial,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub f_x: f64,
    pub grad_norm: f64,
    pub sigma: f64,
    pub s: DVector<f64>,
    pub s_norm: f64,
    pub model_grad_norm: f64,
    /// `m(0) - m(s)`.
    pub model_decrease: f64,
    /// `q(0) - q(s)`.
    pub quadratic_decrease: f64,
    /// Trial objective value `f(x + s)`.
    pub f_trial: f64,
    pub rho: Option<f64>,
    pub accepted: bool,
    /// Ratio denominator was degenerate.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Converged,
    Stalled,
    #[serde(rename = "maxiter")]
    MaxIter,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Stalled => "stalled",
            Status::MaxIter => "maxiter",
        }
    }
}

/// A finished run. `metrics[k]` is `Q_k`; it has one more entry than
/// `records` so that the metric of the final iterate is available too.
#[derive(Debug, Clone)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub problem: String,
    pub config: SolverConfig,
    pub policy: PolicyKind,
    /// Eigenvalue floor of the metric sequence.
    pub a: f64,
    pub psi0: f64,
    pub records: Vec<IterationRecord>,
    pub metrics: Vec<Metric>,
    /// `psi[k]` links `Q_k` and `Q_{k+1}`.
    pub psi: Vec<f64>,
    pub x0: DVector<f64>,
    pub final_x: DVector<f64>,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub grad_tol: f64,
    pub status: Status,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// `x_{k+1}`.
    pub fn next_x(&self, k: usize) -> &DVector<f64> {
        self.records.get(k + 1).map_or(&self.final_x, |r| &r.x)
    }

    /// `f(x_{k+1})`.
    pub fn next_f(&self, k: usize) -> f64 {
        self.records.get(k + 1).map_or(self.final_f, |r| r.f_x)
    }

    pub fn f0(&self) -> f64 {
        self.records.first().map_or(self.final_f, |r| r.f_x)
    }

    /// `a / 2 - tau`.
    pub fn decrease_constant(&self) -> f64 {
        0.5 * self.a - self.config.tau
    }

    /// All iterates `x_0, ..., x_K`.
    pub fn iterates(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.records.iter().map(|r| &r.x).chain(std::iter::once(&self.final_x))
    }

    /// All objective values `f(x_0), ..., f(x_K)`.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.f_x).chain(std::iter::once(self.final_f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub rho: Option<f64>,
    /// The ratio denominator was not positive (or at most `min_denominator`).
    pub flagged: bool,
}

/// Accept/reject decision for one trial step.
pub fn accept_step(
    f_k: f64,
    f_trial: f64,
    dec_m: f64,
    dec_q: f64,
    rule: AcceptanceRule,
    eta: f64,
    min_denominator: f64,
) -> Verdict {
    let denom = match rule {
        AcceptanceRule::Always => {
            return Verdict {
                accepted: true,
                rho: None,
                flagged: false,
            }
        }
        AcceptanceRule::RatioModel => dec_m,
        AcceptanceRule::RatioQuadratic => dec_q,
    };
    if !(denom > min_denominator && denom.is_finite()) {
        return Verdict {
            accepted: false,
            rho: None,
            flagged: true,
        };
    }
    let rho = (f_k - f_trial) / denom;
    Verdict {
        accepted: rho >= eta,
        rho: Some(rho),
        flagged: false,
    }
}

/// Regularization weight for the next iteration, always in `[0, sigma_max]`.
pub fn next_sigma(rule: SigmaRule, sigma: f64, accepted: bool, sigma_max: f64) -> f64 {
    let next = match rule {
        SigmaRule::Constant { value } => value,
        SigmaRule::Adaptive { increase, decrease, .. } => {
            if accepted {
                decrease * sigma
            } else {
                increase * sigma
            }
        }
    };
    next.clamp(0.0, sigma_max)
}

/// Parameters reproducing `x_{k+1} = x_k - alpha grad f(x_k)` with the
/// Armijo-type acceptance `f_k - f_{k+1} >= gamma alpha |grad f|^2`.
pub fn gradient_method_config(alpha: f64, gamma: f64, dim: usize) -> Result<(SolverConfig, MetricPolicy)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "step size alpha = {alpha} must be positive"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    let cfg = SolverConfig {
        tau: 0.0,
        eta: 2.0 * gamma,
        sigma_max: 0.0,
        sigma_rule: SigmaRule::Constant { value: 0.0 },
        acceptance: AcceptanceRule::RatioModel,
        ..SolverConfig::default()
    };
    let policy = MetricPolicy::constant_identity(dim, 1.0 / alpha)?;
    Ok((cfg, policy))
}

/// General scheme: trial steps accepted when the reduction ratio reaches `eta`.
pub fn run_algorithm1(p: &ProblemInstance, cfg: &SolverConfig, pol: &MetricPolicy, x0: &DVector<f64>) -> Result<Trace> {
    cfg.validate()?;
    if cfg.acceptance == AcceptanceRule::Always {
        return Err(Error::Precondition(
            "unconditional acceptance is reserved for the always-accept variant".into(),
        ));
    }
    pol.check_condition1(cfg.tau)?;
    run(Algorithm::General, p, cfg, pol, x0)
}

/// Always-accept variant, valid under `a >= 2 tau + L / (1 - eta)`.
pub fn run_algorithm2(p: &ProblemInstance, cfg: &SolverConfig, pol: &MetricPolicy, x0: &DVector<f64>) -> Result<Trace> {
    cfg.validate()?;
    if cfg.acceptance != AcceptanceRule::Always {
        return Err(Error::Precondition(
            "the always-accept variant needs acceptance = always".into(),
        ));
    }
    let lipschitz = p
        .lipschitz()
        .ok_or_else(|| Error::Precondition(format!("Condition 2 requires L, which `{}` does not provide", p.name())))?;
    pol.check_condition2(cfg.tau, lipschitz.value, cfg.eta)?;
    run(Algorithm::AlwaysAccept, p, cfg, pol, x0)
}

/// Gradient method with step `alpha`, run through the general scheme.
pub fn run_gradient_method(
    p: &ProblemInstance,
    alpha: f64,
    gamma: f64,
    max_iters: usize,
    grad_tol: Option<f64>,
    x0: &DVector<f64>,
) -> Result<Trace> {
    let (mut cfg, pol) = gradient_method_config(alpha, gamma, p.dim())?;
    cfg.max_iters = max_iters;
    cfg.grad_tol = grad_tol;
    let mut trace = run_algorithm1(p, &cfg, &pol, x0)?;
    trace.algorithm = Algorithm::Gradient;
    Ok(trace)
}

fn trial_step(st: &ModelState, cfg: &SolverConfig) -> Result<SubsolveResult> {
    let res = match cfg.subsolver {
        SubsolverChoice::Secular => solve_secular(st, cfg.secular_tol)?,
        SubsolverChoice::Descent { max_inner } => solve_descent(st, cfg.tau, max_inner)?,
    };
    let bound = ModelState::stopping_bound(res.s.norm(), cfg.tau) + cfg.residual_slack;
    if res.grad_norm > bound {
        return Err(Error::InexactStep {
            model_grad_norm: res.grad_norm,
            bound,
        });
    }
    Ok(res)
}

fn run(
    algorithm: Algorithm,
    p: &ProblemInstance,
    cfg: &SolverConfig,
    pol: &MetricPolicy,
    x0: &DVector<f64>,
) -> Result<Trace> {
    if pol.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: pol.dim(),
        });
    }
    let mut x = x0.clone();
    let mut f = p.eval_f(&x)?;
    let mut g = p.eval_grad(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let grad_tol = cfg.grad_tol.unwrap_or(1e-8 * (1.0 + g.norm()));

    let mut sigma = cfg.initial_sigma();
    let mut records = Vec::new();
    let mut metrics: Vec<Metric> = Vec::new();
    let mut stuck = 0;
    let mut status = Status::MaxIter;

    for k in 0..cfg.max_iters {
        if g.norm() <= grad_tol {
            status = Status::Converged;
            break;
        }
        let q = pol.next_matrix(k, metrics.last())?;
        let st = ModelState::new(x.clone(), f, g.clone(), q.clone(), sigma, cfg.r)?;
        let sub = trial_step(&st, cfg)?;
        let x_trial = &x + &sub.s;
        let f_trial = p.eval_f(&x_trial)?;
        if !f_trial.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at the trial point of iteration {k}"
            )));
        }
        let dec_q = st.quadratic_decrease(&sub.s)?;
        let verdict = accept_step(
            f,
            f_trial,
            sub.model_decrease,
            dec_q,
            cfg.acceptance,
            cfg.eta,
            cfg.min_denominator,
        );

        let s_norm = sub.s.norm();
        records.push(IterationRecord {
            k,
            x: x.clone(),
            f_x: f,
            grad_norm: g.norm(),
            sigma,
            s: sub.s,
            s_norm,
            model_grad_norm: sub.grad_norm,
            model_decrease: sub.model_decrease,
            quadratic_decrease: dec_q,
            f_trial,
            rho: verdict.rho,
            accepted: verdict.accepted,
            flagged: verdict.flagged,
        });
        metrics.push(q);

        let next = next_sigma(cfg.sigma_rule, sigma, verdict.accepted, cfg.sigma_max);
        if verdict.accepted {
            g = p.eval_grad(&x_trial)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient after iteration {k}")));
            }
            x = x_trial;
            f = f_trial;
            stuck = 0;
        } else if next <= sigma {
            stuck += 1;
            if stuck >= cfg.patience {
                status = Status::Stalled;
                break;
            }
        } else {
            stuck = 0;
        }
        sigma = next;
    }
    if status == Status::MaxIter && g.norm() <= grad_tol {
        status = Status::Converged;
    }
    let k_final = records.len();
    metrics.push(pol.next_matrix(k_final, metrics.last())?);
    let psi = (0..k_final).map(|k| pol.psi(k)).collect();

    Ok(Trace {
        algorithm,
        problem: p.name().to_string(),
        config: cfg.clone(),
        policy: pol.kind(),
        a: pol.floor(),
        psi0: pol.psi0(),
        records,
        metrics,
        psi,
        x0: x0.clone(),
        final_grad_norm: g.norm(),
        final_x: x,
        final_f: f,
        grad_tol,
        status,
    })
}
