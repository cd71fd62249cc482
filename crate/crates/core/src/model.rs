//! The regularized model
//!
//! ```text
//! m(s) = f(x) + g^T s + 0.5 s^T Q s + (sigma / r) |s|^r
//! ```
//!
//! built at one iterate, with its quadratic part `q(s)`, gradient and decrease.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Metric;

/// `|s|^p` with `0^p = 0` for `p > 0`.
pub fn norm_pow(norm: f64, p: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else if p.fract() == 0.0 && p.abs() <= 64.0 {
        norm.powi(p as i32)
    } else {
        norm.powf(p)
    }
}

/// One iteration's data `(x, f(x), grad f(x), Q, sigma, r)`.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub x: DVector<f64>,
    pub f_x: f64,
    pub g: DVector<f64>,
    pub metric: Metric,
    pub sigma: f64,
    pub r: f64,
}

impl ModelState {
    pub fn new(x: DVector<f64>, f_x: f64, g: DVector<f64>, metric: Metric, sigma: f64, r: f64) -> Result<Self> {
        check_dim(x.len(), g.len())?;
        check_dim(x.len(), metric.dim())?;
        if !(r >= 3.0 && r.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization power r = {r} must be finite and >= 3"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma = {sigma} must be finite and nonnegative"
            )));
        }
        if !f_x.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model data".into()));
        }
        Ok(Self {
            x,
            f_x,
            g,
            metric,
            sigma,
            r,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `(sigma / r) |s|^r`.
    pub fn regularizer(&self, s_norm: f64) -> f64 {
        self.sigma / self.r * norm_pow(s_norm, self.r)
    }

    pub fn value(&self, s: &DVector<f64>) -> Result<f64> {
        let v = self.quadratic_value(s)? + self.regularizer(s.norm());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("model value".into()))
        }
    }

    pub fn quadratic_value(&self, s: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        Ok(self.f_x + self.g.dot(s) + 0.5 * self.metric.quad_form(s))
    }

    /// `g + Q s + sigma |s|^{r-2} s`.
    pub fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), s.len())?;
        let weight = self.sigma * norm_pow(s.norm(), self.r - 2.0);
        Ok(&self.g + self.metric.mul_vec(s) + s * weight)
    }

    /// `m(0) - m(s)`, computed directly rather than by subtracting model values.
    pub fn decrease(&self, s: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        Ok(-self.g.dot(s) - 0.5 * self.metric.quad_form(s) - self.regularizer(s.norm()))
    }

    /// `q(0) - q(s)`, which exceeds the model decrease by the regularizer.
    pub fn quadratic_decrease(&self, s: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        Ok(-self.g.dot(s) - 0.5 * self.metric.quad_form(s))
    }

    /// Right-hand side of the inexactness test, `tau |s| min(|s|, 1)`.
    pub fn stopping_bound(s_norm: f64, tau: f64) -> f64 {
        tau * s_norm * s_norm.min(1.0)
    }

    /// `|grad m(s)| <= tau |s| min(|s|, 1)`.
    pub fn stopping_satisfied(&self, s: &DVector<f64>, tau: f64) -> Result<bool> {
        let lhs = self.gradient(s)?.norm();
        Ok(lhs <= Self::stopping_bound(s.norm(), tau))
    }
}
