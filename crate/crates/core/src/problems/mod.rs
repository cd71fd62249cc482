//! Catalog of differentiable test objectives.
//!
//! Problems are addressed by name:
//!
//! | name               | objective                                              | class        |
//! |--------------------|--------------------------------------------------------|--------------|
//! | `quad-d{n}[-k{c}]` | diagonal quadratic, eigenvalues log-spaced in `[1, c]` | convex       |
//! | `dquad-d{n}-k{c}`  | dense rotated quadratic with a shifted center          | convex       |
//! | `lsq-m{m}-d{n}`    | least squares `0.5 |Ax - b|^2` minus its optimal value | convex       |
//! | `lse-d{n}`         | normalized log-sum-exp of `+-w_j (x_j - c_j)`          | convex       |
//! | `logistic`         | l2-regularized logistic loss minus its optimal value   | convex       |
//! | `ratio-d{n}`       | `|x|^2 / (1 + |x|^2)`                                  | pseudoconvex |
//! | `quartic-d{n}`     | `sum x_i^4 / 4 + |x|^2 / 2`, no Lipschitz constant     | convex       |
//!
//! `quad-d{n}` defaults to `c = 4`, so `quad-d2` is `0.5 * (x1^2 + 4 x2^2)`.

mod quadratic;
mod smooth;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use quadratic::{LeastSquares, Quadratic};
pub use smooth::{LogSumExp, Logistic, Quartic, Ratio, LOGISTIC_DATA};

/// A smooth objective with an analytic gradient.
pub trait Objective: Send + Sync + fmt::Debug {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convexity {
    Convex,
    Pseudoconvex,
    Unknown,
}

/// How a stored Lipschitz constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzSource {
    /// Largest Hessian eigenvalue of a quadratic.
    Exact,
    /// Closed-form upper bound on the Hessian norm.
    AnalyticBound,
    /// Hessian norm maximized on a grid, inflated by 10%.
    GridEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    pub value: f64,
    pub source: LipschitzSource,
}

/// Objective plus the metadata the solvers and certificate checks rely on.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    name: String,
    dim: usize,
    objective: Arc<dyn Objective>,
    convexity: Convexity,
    minimizer: Option<DVector<f64>>,
    f_star: Option<f64>,
    lipschitz: Option<Lipschitz>,
    start: DVector<f64>,
    probe_radius: f64,
}

impl ProblemInstance {
    /// Builds an instance from parts. `start` defaults the initial point of a
    /// run; `probe_radius` is the half-width of the box `[-r, r]^n` used by the
    /// randomized invariant checks.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        objective: Arc<dyn Objective>,
        convexity: Convexity,
        minimizer: Option<DVector<f64>>,
        f_star: Option<f64>,
        lipschitz: Option<Lipschitz>,
        start: DVector<f64>,
        probe_radius: f64,
    ) -> Result<Self> {
        let dim = start.len();
        if dim == 0 {
            return Err(Error::InvalidConfig("problem dimension must be positive".into()));
        }
        if let Some(m) = &minimizer {
            check_dim(dim, m.len())?;
        }
        Ok(Self {
            name: name.into(),
            dim,
            objective,
            convexity,
            minimizer,
            f_star,
            lipschitz,
            start,
            probe_radius,
        })
    }

    /// Looks up a catalog problem by name.
    pub fn by_name(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownProblem(name.to_string());
        let (family, rest) = name.split_once('-').unwrap_or((name, ""));
        let params = parse_params(rest).ok_or_else(unknown)?;
        let get = |key: char| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let only = |allowed: &[char]| params.iter().all(|(k, _)| allowed.contains(k));

        match family {
            "quad" if only(&['d', 'k']) => {
                let n = get('d').ok_or_else(unknown)? as usize;
                let cond = get('k').unwrap_or(4.0);
                quadratic::diagonal(name, n, cond)
            }
            "dquad" if only(&['d', 'k']) => {
                let n = get('d').ok_or_else(unknown)? as usize;
                let cond = get('k').ok_or_else(unknown)?;
                quadratic::dense(name, n, cond)
            }
            "lsq" if only(&['m', 'd']) => {
                let m = get('m').ok_or_else(unknown)? as usize;
                let n = get('d').ok_or_else(unknown)? as usize;
                quadratic::least_squares(name, m, n)
            }
            "lse" if only(&['d']) => smooth::log_sum_exp(name, get('d').ok_or_else(unknown)? as usize),
            "ratio" if only(&['d']) => smooth::ratio(name, get('d').ok_or_else(unknown)? as usize),
            "quartic" if only(&['d']) => smooth::quartic(name, get('d').ok_or_else(unknown)? as usize),
            "logistic" if params.is_empty() => smooth::logistic(name),
            _ => Err(unknown()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn convexity(&self) -> Convexity {
        self.convexity
    }

    pub fn minimizer(&self) -> Option<&DVector<f64>> {
        self.minimizer.as_ref()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn lipschitz(&self) -> Option<Lipschitz> {
        self.lipschitz
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn probe_radius(&self) -> f64 {
        self.probe_radius
    }

    pub fn eval_f(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.objective.value(x))
    }

    pub fn eval_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.objective.gradient(x))
    }

    /// Largest coordinatewise discrepancy between the analytic gradient and
    /// central differences with step `h`, measured as
    /// `|g_i - fd_i| / max(1, |g_i|)`.
    pub fn check_gradient(&self, x: &DVector<f64>, h: f64) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient check point".into()));
        }
        let g = self.objective.gradient(x);
        let mut worst = 0.0_f64;
        let mut probe = x.clone();
        for i in 0..self.dim {
            probe[i] = x[i] + h;
            let up = self.objective.value(&probe);
            probe[i] = x[i] - h;
            let down = self.objective.value(&probe);
            probe[i] = x[i];
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::NonFinite(format!("objective near coordinate {i}")));
            }
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1.0));
        }
        Ok(worst)
    }

    /// Uniform sample from the probe box.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let r = self.probe_radius;
        DVector::from_fn(self.dim, |_, _| rng.gen_range(-r..=r))
    }
}

/// Names of the problems exercised by the default test matrix.
pub fn catalog_names() -> Vec<&'static str> {
    vec![
        "quad-d2",
        "quad-d10-k100",
        "dquad-d5-k10",
        "lsq-m8-d4",
        "lse-d2",
        "lse-d5",
        "logistic",
        "ratio-d2",
        "ratio-d5",
        "quartic-d3",
    ]
}

/// Parses `d10-k100` into `[('d', 10.0), ('k', 100.0)]`.
fn parse_params(rest: &str) -> Option<Vec<(char, f64)>> {
    if rest.is_empty() {
        return Some(Vec::new());
    }
    rest.split('-')
        .map(|tok| {
            let mut chars = tok.chars();
            let key = chars.next()?;
            let value: f64 = chars.as_str().parse().ok()?;
            (value.is_finite() && value > 0.0).then_some((key, value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEED: u64 = 0x5eed_2024;

    fn all() -> Vec<ProblemInstance> {
        catalog_names()
            .into_iter()
            .map(|n| ProblemInstance::by_name(n).unwrap())
            .collect()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn diag_quadratic_values() {
        let p = ProblemInstance::by_name("quad-d2").unwrap();
        assert_eq!(p.eval_f(&v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_relative_eq!(p.eval_f(&v(&[1.0, 1.0])).unwrap(), 2.5, epsilon = 1e-15);
        assert_relative_eq!(p.eval_grad(&v(&[1.0, 1.0])).unwrap(), v(&[1.0, 4.0]), epsilon = 1e-15);
        assert_eq!(p.lipschitz().unwrap().value, 4.0);
    }

    #[test]
    fn ratio_values() {
        let p = ProblemInstance::by_name("ratio-d2").unwrap();
        assert_eq!(p.eval_f(&v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_relative_eq!(p.eval_grad(&v(&[1.0, 0.0])).unwrap(), v(&[0.5, 0.0]), epsilon = 1e-15);
        let l = p.lipschitz().unwrap();
        assert_eq!(l.source, LipschitzSource::GridEstimate);
        // sup of the Hessian norm is 2 (attained at the origin), inflated by 10%
        assert!((l.value - 2.2).abs() < 1e-3, "L = {}", l.value);
    }

    #[test]
    fn quartic_has_no_lipschitz_constant() {
        let p = ProblemInstance::by_name("quartic-d3").unwrap();
        assert!(p.lipschitz().is_none());
        assert_eq!(p.eval_f(&v(&[1.0, 0.0, -2.0])).unwrap(), 0.75 + 6.0);
        assert_eq!(p.eval_grad(&v(&[1.0, 0.0, -2.0])).unwrap(), v(&[2.0, 0.0, -10.0]));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = ProblemInstance::by_name("quad-d2").unwrap();
        assert!(matches!(
            p.eval_f(&v(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(p.eval_grad(&v(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn unknown_names_are_rejected() {
        for name in ["quad", "quad-k4", "cubic-d2", "lse-d2-k3", "logistic-d2", "quad-dx"] {
            assert!(ProblemInstance::by_name(name).is_err(), "{name}");
        }
        assert_eq!(ProblemInstance::by_name("quad-d10-k100").unwrap().dim(), 10);
    }

    #[test]
    fn gradient_check_examples() {
        let quad = ProblemInstance::by_name("quad-d2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        for _ in 0..20 {
            let x = quad.random_point(&mut rng);
            assert!(quad.check_gradient(&x, 1e-5).unwrap() <= 1e-9);
        }
        let lse = ProblemInstance::by_name("lse-d2").unwrap();
        assert!(lse.check_gradient(&v(&[0.3, -0.7]), 1e-5).unwrap() <= 1e-6);
        let ratio = ProblemInstance::by_name("ratio-d2").unwrap();
        assert!(ratio.check_gradient(&v(&[1.0, 2.0]), 1e-5).unwrap() <= 1e-6);
        assert!(ratio.check_gradient(&v(&[1.0, 2.0]), 0.0).is_err());
        assert!(ratio.check_gradient(&v(&[f64::NAN, 2.0]), 1e-5).is_err());
    }

    #[test]
    fn stored_minimizers_are_stationary() {
        for p in all() {
            let x = p.minimizer().expect("catalog problems carry a minimizer");
            let g = p.eval_grad(x).unwrap();
            assert!(
                g.norm() <= 1e-8 * (1.0 + x.norm()),
                "{}: |g| = {:e}",
                p.name(),
                g.norm()
            );
            let f_star = p.f_star().unwrap();
            let f = p.eval_f(x).unwrap();
            assert!((f - f_star).abs() <= 1e-10 * (1.0 + f_star.abs()), "{}", p.name());
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        for p in all() {
            for _ in 0..20 {
                let x = p.random_point(&mut rng);
                let err = p.check_gradient(&x, 1e-5).unwrap();
                assert!(err <= 1e-6, "{}: {err:e}", p.name());
            }
        }
    }

    #[test]
    fn convex_problems_are_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
        for p in all().into_iter().filter(|p| p.convexity() == Convexity::Convex) {
            for _ in 0..1000 {
                let x = p.random_point(&mut rng);
                let y = p.random_point(&mut rng);
                let mid = (&x + &y) * 0.5;
                let lhs = p.eval_f(&mid).unwrap();
                let rhs = 0.5 * (p.eval_f(&x).unwrap() + p.eval_f(&y).unwrap());
                assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()), "{}", p.name());
            }
        }
    }

    #[test]
    fn pseudoconvex_problems_satisfy_the_descent_implication() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
        let pseudo: Vec<_> = all()
            .into_iter()
            .filter(|p| p.convexity() == Convexity::Pseudoconvex)
            .collect();
        assert!(!pseudo.is_empty());
        for p in pseudo {
            let mut checked = 0;
            for _ in 0..1000 {
                let x = p.random_point(&mut rng);
                let y = p.random_point(&mut rng);
                if p.eval_f(&y).unwrap() < p.eval_f(&x).unwrap() {
                    let slope = p.eval_grad(&x).unwrap().dot(&(&y - &x));
                    assert!(slope < 0.0, "{}: slope {slope:e}", p.name());
                    checked += 1;
                }
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn stored_lipschitz_constants_bound_gradient_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
        for p in all() {
            let Some(l) = p.lipschitz().map(|l| l.value) else {
                assert_eq!(p.name(), "quartic-d3");
                continue;
            };
            for _ in 0..1000 {
                let x = p.random_point(&mut rng);
                // half of the pairs are close together, where curvature dominates
                let y = if rng.gen_bool(0.5) {
                    &x + p.random_point(&mut rng) * 1e-3
                } else {
                    p.random_point(&mut rng)
                };
                let dg = (p.eval_grad(&x).unwrap() - p.eval_grad(&y).unwrap()).norm();
                let dx = (&x - &y).norm();
                assert!(dg <= l * dx * (1.0 + 1e-12) + 1e-15, "{}", p.name());
            }
        }
    }

    #[test]
    fn evaluators_are_shareable_across_threads() {
        let p = ProblemInstance::by_name("logistic").unwrap();
        let x = p.start().clone();
        let expected = p.eval_f(&x).unwrap();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(|| p.eval_f(&x).unwrap())).collect();
            for h in handles {
                assert_eq!(h.join().unwrap(), expected);
            }
        });
    }
}
