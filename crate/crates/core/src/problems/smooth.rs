use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use super::{Convexity, Lipschitz, LipschitzSource, Objective, ProblemInstance};
use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;

/// Shipped dataset for the logistic problem: columns `z1,z2,label`, labels in {-1, 1}.
pub const LOGISTIC_DATA: &str = include_str!("../../data/logistic_tiny.csv");

const LOGISTIC_L2: f64 = 0.1;

/// `f(x) = log( (1/n) sum_j cosh(w_j (x_j - c_j)) )`, i.e. the log-sum-exp of
/// the `2n` affine pieces `+-w_j (x_j - c_j)` shifted so that `f* = 0`.
///
/// Evaluated as `ln_1p(mean(2 sinh^2(u/2)))` so values near the minimum keep
/// full relative precision.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    pub weights: DVector<f64>,
    pub center: DVector<f64>,
}

impl LogSumExp {
    fn excess(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let u = (x - &self.center).component_mul(&self.weights);
        let n = u.len() as f64;
        let excess = u.iter().map(|&ui| 2.0 * (0.5 * ui).sinh().powi(2)).sum::<f64>() / n;
        (u, excess)
    }
}

impl Objective for LogSumExp {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.excess(x).1.ln_1p()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (u, excess) = self.excess(x);
        let denom = u.len() as f64 * (1.0 + excess);
        DVector::from_fn(u.len(), |j, _| self.weights[j] * u[j].sinh() / denom)
    }
}

/// l2-regularized logistic loss
/// `L(w) = (1/m) sum_i log(1 + exp(-y_i z_i^T w)) + (lambda/2) |w|^2`.
///
/// Once an anchor `w*` is set, the objective is the excess `L(w) - L(w*)`,
/// evaluated term by term from `w - w*` so that values near the minimizer keep
/// full relative precision. The gradient is that of `L` either way.
#[derive(Debug, Clone)]
pub struct Logistic {
    /// One row per sample, first column is the intercept.
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub l2: f64,
    anchor: Option<Anchor>,
}

#[derive(Debug, Clone)]
struct Anchor {
    w: DVector<f64>,
    margins: DVector<f64>,
}

/// `softplus(b + h) - softplus(b)` without cancellation.
fn softplus_diff(b: f64, h: f64) -> f64 {
    (sigmoid(b) * h.exp_m1()).ln_1p()
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn from_csv(text: &str, l2: f64) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() != 3 || fields[2].abs() != 1.0 {
                return Err(Error::Data(format!(
                    "line {}: expected `z1,z2,label` with label +-1",
                    lineno + 1
                )));
            }
            rows.extend_from_slice(&[1.0, fields[0], fields[1]]);
            labels.push(fields[2]);
        }
        if labels.is_empty() {
            return Err(Error::Data("empty logistic dataset".into()));
        }
        Ok(Self {
            features: DMatrix::from_row_slice(labels.len(), 3, &rows),
            labels: DVector::from_vec(labels),
            l2,
            anchor: None,
        })
    }

    /// Raw loss `L(w)`.
    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        let m = self.labels.len() as f64;
        let loss: f64 = self.margins(w).iter().map(|&t| softplus(-t)).sum();
        loss / m + 0.5 * self.l2 * w.norm_squared()
    }

    /// Measures values relative to `L(w)`.
    fn anchored_at(mut self, w: DVector<f64>) -> Self {
        let margins = self.margins(&w);
        self.anchor = Some(Anchor { w, margins });
        self
    }

    fn margins(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.features * w).component_mul(&self.labels)
    }

    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let m = self.labels.len() as f64;
        let n = w.len();
        let margins = self.margins(w);
        let mut h = DMatrix::identity(n, n) * self.l2;
        for (i, &t) in margins.iter().enumerate() {
            let z = self.features.row(i).transpose();
            let weight = sigmoid(t) * sigmoid(-t) / m;
            h += &z * z.transpose() * weight;
        }
        h
    }

    /// Gradient-Lipschitz bound `lambda + lambda_max(Z^T Z) / (4m)`.
    fn lipschitz_bound(&self) -> f64 {
        let m = self.labels.len() as f64;
        self.l2 + max_eigenvalue(&self.features.tr_mul(&self.features)) / (4.0 * m)
    }

    /// Minimizer by Newton's method with the analytic Hessian.
    fn solve(&self) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(self.features.ncols());
        for _ in 0..100 {
            let g = self.gradient(&w);
            if g.norm() <= 1e-15 {
                break;
            }
            let step = self
                .hessian(&w)
                .cholesky()
                .ok_or_else(|| Error::Data("logistic Hessian not positive definite".into()))?
                .solve(&g);
            w -= step;
        }
        Ok(w)
    }
}

impl Objective for Logistic {
    fn value(&self, w: &DVector<f64>) -> f64 {
        let Some(anchor) = &self.anchor else {
            return self.loss(w);
        };
        let m = self.labels.len() as f64;
        let d = w - &anchor.w;
        let shift = self.margins(&d);
        let loss: f64 = anchor
            .margins
            .iter()
            .zip(shift.iter())
            .map(|(&t, &dt)| softplus_diff(-t, -dt))
            .sum();
        loss / m + 0.5 * self.l2 * d.dot(&(&anchor.w * 2.0 + &d))
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let m = self.labels.len() as f64;
        let coeffs = self
            .margins(w)
            .iter()
            .zip(self.labels.iter())
            .map(|(&t, &y)| -y * sigmoid(-t) / m)
            .collect::<Vec<_>>();
        self.features.tr_mul(&DVector::from_vec(coeffs)) + w * self.l2
    }
}

/// `f(x) = |x|^2 / (1 + |x|^2)`: pseudoconvex, not convex, minimized at 0.
#[derive(Debug, Clone, Copy)]
pub struct Ratio;

impl Objective for Ratio {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let t = x.norm_squared();
        t / (1.0 + t)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = x.norm_squared();
        x * (2.0 / ((1.0 + t) * (1.0 + t)))
    }
}

/// `f(x) = sum x_i^4 / 4 + |x|^2 / 2`: convex with minimizer 0, but its gradient
/// has no global Lipschitz constant.
#[derive(Debug, Clone, Copy)]
pub struct Quartic;

impl Objective for Quartic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter().map(|&v| 0.25 * v.powi(4) + 0.5 * v * v).sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(|v| v * v * v + v)
    }
}

/// Hessian-norm bound for [`Ratio`]: the objective is radial, so every Hessian
/// is a rotation of one taken at `(rho, 0)`. Central differences of the
/// analytic gradient over `rho` in `[0, 10]`, maximized, then inflated by 10%.
fn ratio_lipschitz() -> f64 {
    static L: OnceLock<f64> = OnceLock::new();
    *L.get_or_init(|| {
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for i in 0..=2000 {
            let rho = i as f64 * 0.005;
            let mut cols = [[0.0; 2]; 2];
            for (j, col) in cols.iter_mut().enumerate() {
                let mut up = DVector::from_vec(vec![rho, 0.0]);
                let mut down = up.clone();
                up[j] += h;
                down[j] -= h;
                let d = (Ratio.gradient(&up) - Ratio.gradient(&down)) / (2.0 * h);
                *col = [d[0], d[1]];
            }
            let (a, b, c) = (cols[0][0], 0.5 * (cols[0][1] + cols[1][0]), cols[1][1]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            worst = worst.max((mid + rad).abs()).max((mid - rad).abs());
        }
        1.1 * worst
    })
}

pub(super) fn log_sum_exp(name: &str, n: usize) -> Result<ProblemInstance> {
    if n == 0 || n > 1000 {
        return Err(Error::InvalidConfig(format!("dimension {n} outside 1..=1000")));
    }
    let weights = DVector::from_fn(n, |j, _| 1.0 + j as f64 / (n.max(2) - 1) as f64);
    let center = DVector::from_fn(n, |j, _| {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        0.2 * sign * (j + 1) as f64
    });
    let l = weights.iter().map(|w| w * w).fold(0.0, f64::max);
    ProblemInstance::new(
        name,
        Arc::new(LogSumExp {
            weights,
            center: center.clone(),
        }),
        Convexity::Convex,
        Some(center),
        Some(0.0),
        Some(Lipschitz {
            value: l,
            source: LipschitzSource::AnalyticBound,
        }),
        DVector::from_element(n, 1.0),
        2.0,
    )
}

pub(super) fn logistic(name: &str) -> Result<ProblemInstance> {
    let raw = Logistic::from_csv(LOGISTIC_DATA, LOGISTIC_L2)?;
    let minimizer = raw.solve()?;
    let l = raw.lipschitz_bound();
    let n = minimizer.len();
    let objective = raw.anchored_at(minimizer.clone());
    ProblemInstance::new(
        name,
        Arc::new(objective),
        Convexity::Convex,
        Some(minimizer),
        Some(0.0),
        Some(Lipschitz {
            value: l,
            source: LipschitzSource::AnalyticBound,
        }),
        DVector::from_element(n, 1.0),
        2.0,
    )
}

pub(super) fn ratio(name: &str, n: usize) -> Result<ProblemInstance> {
    if n == 0 || n > 1000 {
        return Err(Error::InvalidConfig(format!("dimension {n} outside 1..=1000")));
    }
    ProblemInstance::new(
        name,
        Arc::new(Ratio),
        Convexity::Pseudoconvex,
        Some(DVector::zeros(n)),
        Some(0.0),
        Some(Lipschitz {
            value: ratio_lipschitz(),
            source: LipschitzSource::GridEstimate,
        }),
        DVector::from_element(n, 1.0),
        2.0,
    )
}

pub(super) fn quartic(name: &str, n: usize) -> Result<ProblemInstance> {
    if n == 0 || n > 1000 {
        return Err(Error::InvalidConfig(format!("dimension {n} outside 1..=1000")));
    }
    ProblemInstance::new(
        name,
        Arc::new(Quartic),
        Convexity::Convex,
        Some(DVector::zeros(n)),
        Some(0.0),
        None,
        DVector::from_element(n, 1.0),
        2.0,
    )
}
