use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Convexity, Lipschitz, LipschitzSource, Objective, ProblemInstance};
use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;

/// `f(x) = 0.5 (x - c)^T H (x - c)` with `H` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl Objective for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        0.5 * d.dot(&(&self.hessian * &d))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * (x - &self.center)
    }
}

/// Linear least squares `0.5 |A x - b|^2`, measured as the excess over its
/// optimum: `f(x) = 0.5 |A (x - x*)|^2`, where `x*` solves the normal equations.
///
/// Both forms have the same gradient. The excess form keeps full relative
/// precision near the minimizer, where the raw residual norm is dominated by
/// its constant part and objective decreases fall below one ulp.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub solution: DVector<f64>,
}

impl LeastSquares {
    /// Raw residual objective `0.5 |A x - b|^2`.
    pub fn residual_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }
}

impl Objective for LeastSquares {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * (x - &self.solution)).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(&self.a * (x - &self.solution)))
    }
}

fn log_spaced(n: usize, cond: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| cond.powf(i as f64 / (n - 1) as f64)).collect()
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || n > 1000 {
        return Err(Error::InvalidConfig(format!("dimension {n} outside 1..=1000")));
    }
    Ok(())
}

fn check_cond(cond: f64) -> Result<()> {
    if cond < 1.0 {
        return Err(Error::InvalidConfig(format!("condition number {cond} below 1")));
    }
    Ok(())
}

pub(super) fn diagonal(name: &str, n: usize, cond: f64) -> Result<ProblemInstance> {
    check_size(n)?;
    check_cond(cond)?;
    let eig = log_spaced(n, cond);
    let l = eig.iter().cloned().fold(0.0, f64::max);
    let objective = Quadratic {
        hessian: DMatrix::from_diagonal(&DVector::from_vec(eig)),
        center: DVector::zeros(n),
    };
    ProblemInstance::new(
        name,
        Arc::new(objective),
        Convexity::Convex,
        Some(DVector::zeros(n)),
        Some(0.0),
        Some(Lipschitz {
            value: l,
            source: LipschitzSource::Exact,
        }),
        DVector::from_element(n, 1.0),
        2.0,
    )
}

pub(super) fn dense(name: &str, n: usize, cond: f64) -> Result<ProblemInstance> {
    check_size(n)?;
    check_cond(cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0ad_0000 + n as u64);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let rotation = raw.qr().q();
    let eig = DMatrix::from_diagonal(&DVector::from_vec(log_spaced(n, cond)));
    let h = &rotation * eig * rotation.transpose();
    let hessian = (&h + h.transpose()) * 0.5;
    let center = DVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        0.5 * sign * (1.0 + i as f64 / n as f64)
    });
    let l = max_eigenvalue(&hessian);
    ProblemInstance::new(
        name,
        Arc::new(Quadratic {
            hessian,
            center: center.clone(),
        }),
        Convexity::Convex,
        Some(center),
        Some(0.0),
        Some(Lipschitz {
            value: l,
            source: LipschitzSource::Exact,
        }),
        DVector::zeros(n),
        2.0,
    )
}

pub(super) fn least_squares(name: &str, m: usize, n: usize) -> Result<ProblemInstance> {
    check_size(n)?;
    if m < n {
        return Err(Error::InvalidConfig(format!(
            "least squares needs at least as many rows as columns (m = {m}, n = {n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x15b0_0000 + (m * 1000 + n) as u64);
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let normal = a.tr_mul(&a);
    let minimizer = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Data("least-squares design matrix is rank deficient".into()))?
        .solve(&a.tr_mul(&b));
    let l = max_eigenvalue(&normal);
    let objective = LeastSquares {
        a,
        b,
        solution: minimizer.clone(),
    };
    ProblemInstance::new(
        name,
        Arc::new(objective),
        Convexity::Convex,
        Some(minimizer),
        Some(0.0),
        Some(Lipschitz {
            value: l,
            source: LipschitzSource::Exact,
        }),
        DVector::zeros(n),
        2.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_excess_matches_residual_form() {
        let p = least_squares("lsq", 8, 4).unwrap();
        let lsq = LeastSquares {
            a: DMatrix::from_fn(8, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64),
            b: DVector::from_fn(8, |i, _| (i as f64).sin()),
            solution: DVector::zeros(4),
        };
        let normal = lsq.a.tr_mul(&lsq.a);
        let solution = normal.cholesky().unwrap().solve(&lsq.a.tr_mul(&lsq.b));
        let lsq = LeastSquares { solution, ..lsq };
        let offset = lsq.residual_value(&lsq.solution);
        for x in [
            DVector::from_element(4, 1.0),
            DVector::from_vec(vec![0.3, -2.0, 0.5, 1.5]),
        ] {
            let diff = lsq.residual_value(&x) - offset;
            assert!((lsq.value(&x) - diff).abs() <= 1e-12 * (1.0 + diff.abs()));
        }
        assert_eq!(p.f_star(), Some(0.0));
    }
}
