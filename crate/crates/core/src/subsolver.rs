//! Trial-step computation.
//!
//! [`solve_secular`] finds the global minimizer of the model through the
//! eigendecomposition of `Q`: the minimizer is `s = -(Q + lambda I)^{-1} g`
//! where `lambda >= 0` solves the scalar equation
//!
//! ```text
//! lambda = sigma |s(lambda)|^{r - 2}
//! ```
//!
//! [`solve_descent`] runs backtracking gradient descent on the model and stops
//! at the first iterate passing the inexactness test.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Metric;
use crate::model::{norm_pow, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsolveMethod {
    Secular,
    Descent,
    Zero,
}

#[derive(Debug, Clone)]
pub struct SubsolveResult {
    pub s: DVector<f64>,
    /// `|grad m(s)|`.
    pub grad_norm: f64,
    /// `m(0) - m(s)`.
    pub model_decrease: f64,
    pub iterations: usize,
    pub method: SubsolveMethod,
    /// Secular multiplier; `None` for the descent method.
    pub lambda: Option<f64>,
}

/// Model-gradient residual, relative to `max(1, |g|)`, accepted when the
/// root bracket collapses before the target accuracy is reached.
pub const SECULAR_RESIDUAL_TOL: f64 = 1e-12;

const MAX_BRACKET_DOUBLINGS: usize = 2100;
const MAX_ROOT_ITERATIONS: usize = 400;

/// `|(Q + lambda I)^{-1} g|` from eigen-coordinates `g_hat = V^T g`.
pub fn secular_step_norm(eigenvalues: &DVector<f64>, g_hat: &DVector<f64>, lambda: f64) -> f64 {
    g_hat
        .iter()
        .zip(eigenvalues.iter())
        .map(|(gi, mu)| {
            let c = gi / (mu + lambda);
            c * c
        })
        .sum::<f64>()
        .sqrt()
}

fn shifted_solve(metric: &Metric, eigenvalues: &DVector<f64>, g_hat: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let w = DVector::from_fn(g_hat.len(), |i, _| -g_hat[i] / (eigenvalues[i] + lambda));
    metric.from_eigen_coords(&w)
}

fn finish(
    st: &ModelState,
    s: DVector<f64>,
    iterations: usize,
    method: SubsolveMethod,
    lambda: Option<f64>,
) -> Result<SubsolveResult> {
    let grad_norm = st.gradient(&s)?.norm();
    let model_decrease = st.decrease(&s)?;
    if !(grad_norm.is_finite() && model_decrease.is_finite()) {
        return Err(Error::NonFinite("trial step".into()));
    }
    Ok(SubsolveResult {
        s,
        grad_norm,
        model_decrease,
        iterations,
        method,
        lambda,
    })
}

/// Global minimizer of the model up to `|grad m(s)| <= tol * max(1, |g|)`.
///
/// Requires `Q` positive definite.
pub fn solve_secular(st: &ModelState, tol: f64) -> Result<SubsolveResult> {
    let eigenvalues = st.metric.eigenvalues();
    let min_eig = eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    let g_norm = st.g.norm();
    if g_norm == 0.0 {
        return finish(st, DVector::zeros(st.dim()), 0, SubsolveMethod::Zero, Some(0.0));
    }
    let g_hat = st.metric.to_eigen_coords(&st.g);

    let (lambda, iterations) = if st.sigma == 0.0 {
        (0.0, 0)
    } else {
        secular_root(&eigenvalues, &g_hat, st.sigma, st.r)?
    };
    let s = shifted_solve(&st.metric, &eigenvalues, &g_hat, lambda);
    let result = finish(st, s, iterations, SubsolveMethod::Secular, Some(lambda))?;
    if result.grad_norm > tol * g_norm.max(1.0) {
        return Err(Error::Secular(format!(
            "model gradient {:e} above tolerance {:e} (lambda = {lambda:e}, sigma = {}, r = {})",
            result.grad_norm,
            tol * g_norm.max(1.0),
            st.sigma,
            st.r
        )));
    }
    Ok(result)
}

/// Root of `chi(lambda) = sigma |s(lambda)|^{r-2} - lambda` on `lambda >= 0`.
///
/// At `s = s(lambda)` the model gradient is `chi(lambda) s`, so `chi` measures
/// the stationarity error directly. It is convex and decreasing with slope at
/// most -1 and `chi(0) > 0`, so Newton steps safeguarded by bisection converge
/// from any bracket.
fn secular_root(eigenvalues: &DVector<f64>, g_hat: &DVector<f64>, sigma: f64, r: f64) -> Result<(f64, usize)> {
    let power = r - 2.0;
    let chi = |lambda: f64| {
        let s_norm = secular_step_norm(eigenvalues, g_hat, lambda);
        (sigma * norm_pow(s_norm, power) - lambda, s_norm)
    };
    let g_norm = g_hat.norm();

    let mut lo = 0.0_f64;
    let mut hi = sigma * g_norm.max(1.0).powf(power);
    let mut doublings = 0;
    while chi(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Secular(format!(
                "no sign change up to lambda = {hi:e} (sigma = {sigma}, |g| = {g_norm:e})"
            )));
        }
    }

    let mut lambda = hi;
    let mut best = (f64::INFINITY, hi);
    for iter in 1..=MAX_ROOT_ITERATIONS {
        let (value, s_norm) = chi(lambda);
        // |grad m(s(lambda))| = |chi| |s|
        let residual = value.abs() * s_norm;
        if residual < best.0 {
            best = (residual, lambda);
        }
        if value == 0.0 || residual <= f64::EPSILON * g_norm {
            return Ok((lambda, doublings + iter));
        }
        if value > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
        let cubic: f64 = g_hat
            .iter()
            .zip(eigenvalues.iter())
            .map(|(gi, mu)| gi * gi / (mu + lambda).powi(3))
            .sum();
        let slope = -1.0 - sigma * power * norm_pow(s_norm, power - 1.0) * cubic / s_norm;
        let newton = lambda - value / slope;
        lambda = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }

    let (residual, lambda) = best;
    if residual <= SECULAR_RESIDUAL_TOL * g_norm.max(1.0) {
        Ok((lambda, doublings + MAX_ROOT_ITERATIONS))
    } else {
        Err(Error::Secular(format!(
            "model gradient {residual:e} at lambda = {lambda:e} after bracket collapse"
        )))
    }
}

/// Armijo parameter for the inner backtracking.
const ARMIJO: f64 = 1e-4;

/// `m(s + d) - m(s)` without forming either model value, so that the
/// difference keeps its relative accuracy when both values are close.
fn model_change(st: &ModelState, s: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let qd = st.metric.mul_vec(d);
    let linear = (&st.g + st.metric.mul_vec(s)).dot(d) + 0.5 * d.dot(&qd);
    let a = s.norm();
    let b = (s + d).norm();
    let reg = if st.sigma == 0.0 {
        0.0
    } else if a == 0.0 {
        st.regularizer(b)
    } else {
        // |s+d| - |s| from the difference of squares
        let gap = (2.0 * s.dot(d) + d.norm_squared()) / (a + b);
        st.regularizer(a) * (st.r * (gap / a).ln_1p()).exp_m1()
    };
    linear + reg
}

/// Backtracking gradient descent on the model from `s = 0`, stopped at the
/// first nonzero iterate with `|grad m(s)| <= tau |s| min(|s|, 1)`.
pub fn solve_descent(st: &ModelState, tau: f64, max_inner: usize) -> Result<SubsolveResult> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(
            "descent subsolver needs tau > 0; use the secular method for tau = 0".into(),
        ));
    }
    if st.sigma < 0.0 || st.r < 3.0 {
        return Err(Error::InvalidConfig(
            "descent subsolver needs sigma >= 0 and r >= 3".into(),
        ));
    }
    if st.g.norm() == 0.0 {
        return finish(st, DVector::zeros(st.dim()), 0, SubsolveMethod::Zero, None);
    }

    let mut s = DVector::zeros(st.dim());
    let mut step = 1.0_f64;
    let mut grad = st.gradient(&s)?;
    for iter in 1..=max_inner {
        let grad_sq = grad.norm_squared();
        let mut trial_step = step;
        let next = loop {
            let d = &grad * -trial_step;
            let change = model_change(st, &s, &d);
            if change <= -ARMIJO * trial_step * grad_sq {
                break s.clone() + d;
            }
            trial_step *= 0.5;
            if trial_step < 1e-300 {
                return Err(Error::InnerIterations {
                    iterations: iter,
                    residual: grad.norm(),
                    last: s,
                });
            }
        };
        s = next;
        step = trial_step * 2.0;
        grad = st.gradient(&s)?;
        let s_norm = s.norm();
        if s_norm > 0.0 && grad.norm() <= ModelState::stopping_bound(s_norm, tau) {
            return finish(st, s, iter, SubsolveMethod::Descent, None);
        }
    }
    Err(Error::InnerIterations {
        iterations: max_inner,
        residual: grad.norm(),
        last: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_state() -> ModelState {
        ModelState::new(
            v(&[0.0]),
            0.0,
            v(&[-2.0]),
            Metric::scaled_identity(1, 2.0).unwrap(),
            3.0,
            3.0,
        )
        .unwrap()
    }

    /// Bisection on -2 + 2s + 3s^2 over (0, 1).
    fn bisection_root() -> f64 {
        let f = |s: f64| -2.0 + 2.0 * s + 3.0 * s * s;
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_secular_matches_bisection() {
        let oracle = bisection_root();
        assert!((oracle - (-1.0 + 7.0_f64.sqrt()) / 3.0).abs() < 1e-15);
        let res = solve_secular(&scalar_state(), 1e-12).unwrap();
        assert_eq!(res.method, SubsolveMethod::Secular);
        assert!((res.s[0] - oracle).abs() <= 1e-9);
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let mut st = scalar_state();
        st.g = v(&[0.0]);
        let res = solve_secular(&st, 1e-12).unwrap();
        assert_eq!(res.method, SubsolveMethod::Zero);
        assert_eq!(res.s, v(&[0.0]));
        let res = solve_descent(&st, 0.1, 10).unwrap();
        assert_eq!(res.method, SubsolveMethod::Zero);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn zero_sigma_gives_newton_step() {
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let g = v(&[1.0, -2.0]);
        let st = ModelState::new(
            v(&[0.0, 0.0]),
            0.0,
            g.clone(),
            Metric::from_matrix(q.clone()).unwrap(),
            0.0,
            3.0,
        )
        .unwrap();
        let res = solve_secular(&st, 1e-12).unwrap();
        let expected = -q.lu().solve(&g).unwrap();
        assert_relative_eq!(res.s, expected, epsilon = 1e-14);
    }

    #[test]
    fn indefinite_metric_is_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let st = ModelState::new(
            v(&[0.0, 0.0]),
            0.0,
            v(&[1.0, 1.0]),
            Metric::from_matrix(q).unwrap(),
            1.0,
            3.0,
        )
        .unwrap();
        assert!(matches!(
            solve_secular(&st, 1e-12),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn model_change_matches_value_difference() {
        for r in [3.0, 3.5] {
            let mut st = scalar_state();
            st.r = r;
            for (s, d) in [(0.0, 0.3), (0.4, -0.1), (-1.2, 2.0), (0.5, -0.5)] {
                let (s, d) = (v(&[s]), v(&[d]));
                let direct = st.value(&(&s + &d)).unwrap() - st.value(&s).unwrap();
                assert_relative_eq!(model_change(&st, &s, &d), direct, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn descent_finds_an_inexact_step() {
        let st = scalar_state();
        let res = solve_descent(&st, 0.1, 10_000).unwrap();
        assert_eq!(res.method, SubsolveMethod::Descent);
        assert!(st.stopping_satisfied(&res.s, 0.1).unwrap());
        assert!((res.s[0] - 0.548584).abs() <= 0.2);
        assert!(res.model_decrease > 0.0);
    }

    #[test]
    fn descent_requires_positive_tau_and_reports_exhaustion() {
        let st = scalar_state();
        assert!(matches!(solve_descent(&st, 0.0, 10), Err(Error::InvalidConfig(_))));
        match solve_descent(&st, 1e-12, 2) {
            Err(Error::InnerIterations { iterations, last, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 1);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn descent_decreases_model_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let b = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let a = 0.5 + rng.gen_range(0.0..2.0);
            let q = &b * b.transpose() + DMatrix::identity(2, 2) * a;
            let g = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let tau = 0.2 * a;
            let st = ModelState::new(
                v(&[0.0, 0.0]),
                0.0,
                g,
                Metric::from_matrix(q).unwrap(),
                rng.gen_range(0.0..4.0),
                3.0,
            )
            .unwrap();
            let res = solve_descent(&st, tau, 100_000).unwrap();
            assert!(res.model_decrease > 0.0);
            let c = 0.5 * a - tau;
            assert!(res.model_decrease >= c * res.s.norm_squared() - 1e-12);
        }
    }

    fn arb_state(dim: usize) -> impl Strategy<Value = ModelState> {
        (
            prop::collection::vec(-3.0..3.0f64, dim),
            prop::collection::vec(-1.0..1.0f64, dim * dim),
            0.2..3.0f64,
            prop::sample::select(vec![0.0, 0.5, 3.0]),
            prop::sample::select(vec![3.0, 3.5, 4.0]),
        )
            .prop_map(move |(g, raw, a, sigma, r)| {
                let b = DMatrix::from_row_slice(dim, dim, &raw);
                let q = &b * b.transpose() + DMatrix::identity(dim, dim) * a;
                ModelState::new(
                    DVector::zeros(dim),
                    0.0,
                    DVector::from_vec(g),
                    Metric::from_matrix(q).unwrap(),
                    sigma,
                    r,
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn secular_step_norm_is_decreasing(st in arb_state(3)) {
            let eig = st.metric.eigenvalues();
            let g_hat = st.metric.to_eigen_coords(&st.g);
            prop_assume!(g_hat.norm() > 1e-9);
            let mut prev = secular_step_norm(&eig, &g_hat, 0.0);
            for i in 1..200 {
                let lambda = 0.05 * i as f64 * (1.0 + i as f64 * 0.1);
                let cur = secular_step_norm(&eig, &g_hat, lambda);
                prop_assert!(cur < prev);
                prev = cur;
            }
        }

        #[test]
        fn secular_result_is_stationary_and_decreasing(st in arb_state(2), tau in 0.0..0.1f64) {
            let res = solve_secular(&st, 1e-10).unwrap();
            let a = st.metric.min_eigenvalue();
            prop_assert!(res.grad_norm <= 1e-10 * st.g.norm().max(1.0));
            // sufficient decrease: m(0) - m(s) >= (a/2 - tau) |s|^2
            prop_assert!(res.model_decrease >= (0.5 * a - tau) * res.s.norm_squared() - 1e-10);
        }
    }
}
