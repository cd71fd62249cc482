//! Generation and validation of the metric sequence `Q_k`.
//!
//! Every policy keeps `Q_k >= a I` and `Q_{k+1} <= (1 + psi_k) Q_k` with
//! `psi_k = psi0 / (k + 1)^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Metric};

/// Relative slack allowed on the eigenvalue floor, absorbing rounding in the
/// affine updates.
const FLOOR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// `Q_k = Q_0`.
    Constant,
    /// `Q_k = (1 + psi_{k-1}) Q_{k-1}`.
    Inflated,
    /// `Q_k = (1 - weight) Q_{k-1} + weight * a I`.
    ShrinkToFloor { weight: f64 },
}

#[derive(Debug, Clone)]
pub struct MetricPolicy {
    kind: PolicyKind,
    q0: Metric,
    a: f64,
    psi0: f64,
}

impl MetricPolicy {
    pub fn new(kind: PolicyKind, q0: Metric, a: f64, psi0: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eigenvalue floor a = {a} must be positive"
            )));
        }
        if !(psi0 >= 0.0 && psi0.is_finite()) {
            return Err(Error::InvalidConfig(format!("psi0 = {psi0} must be nonnegative")));
        }
        if let PolicyKind::ShrinkToFloor { weight } = kind {
            if !(0.0..=1.0).contains(&weight) {
                return Err(Error::InvalidConfig(format!("shrink weight {weight} outside [0, 1]")));
            }
        }
        let min_eig = q0.min_eigenvalue();
        if min_eig < a * (1.0 - FLOOR_RTOL) {
            return Err(Error::FloorViolated {
                k: 0,
                min_eigenvalue: min_eig,
                floor: a,
            });
        }
        Ok(Self { kind, q0, a, psi0 })
    }

    /// `Q_k = c I` for every k, with floor `a = c`.
    pub fn constant_identity(n: usize, c: f64) -> Result<Self> {
        Self::new(PolicyKind::Constant, Metric::scaled_identity(n, c)?, c, 0.0)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn q0(&self) -> &Metric {
        &self.q0
    }

    pub fn floor(&self) -> f64 {
        self.a
    }

    pub fn psi0(&self) -> f64 {
        self.psi0
    }

    pub fn dim(&self) -> usize {
        self.q0.dim()
    }

    /// `psi_k = psi0 / (k + 1)^2`.
    pub fn psi(&self, k: usize) -> f64 {
        let d = (k + 1) as f64;
        self.psi0 / (d * d)
    }

    /// `sum_k psi_k = psi0 * pi^2 / 6`.
    pub fn psi_sum(&self) -> f64 {
        self.psi0 * PI * PI / 6.0
    }

    /// Returns `Q_k` given `Q_{k-1}` (`None` for `k = 0`).
    pub fn next_matrix(&self, k: usize, prev: Option<&Metric>) -> Result<Metric> {
        let q = match (k, prev) {
            (0, _) | (_, None) => self.q0.clone(),
            (_, Some(prev)) => match self.kind {
                PolicyKind::Constant => self.q0.clone(),
                PolicyKind::Inflated => prev.affine(1.0 + self.psi(k - 1), 0.0),
                PolicyKind::ShrinkToFloor { weight } => prev.affine(1.0 - weight, weight * self.a),
            },
        };
        let min_eig = q.min_eigenvalue();
        if min_eig < self.a * (1.0 - FLOOR_RTOL) {
            return Err(Error::FloorViolated {
                k,
                min_eigenvalue: min_eig,
                floor: self.a,
            });
        }
        Ok(q)
    }

    /// `a > 2 tau`.
    pub fn check_condition1(&self, tau: f64) -> Result<()> {
        if self.a > 2.0 * tau {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "Condition 1 requires a > 2 tau (a = {}, tau = {tau})",
                self.a
            )))
        }
    }

    /// `a >= 2 tau + L / (1 - eta)` with `eta` in (0, 1).
    pub fn check_condition2(&self, tau: f64, lipschitz: f64, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Precondition(format!(
                "Condition 2 requires eta in (0, 1), got {eta}"
            )));
        }
        let needed = min_floor_condition2(tau, lipschitz, eta);
        if self.a >= needed * (1.0 - FLOOR_RTOL) {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "Condition 2 requires a >= 2 tau + L/(1 - eta) = {needed} (a = {})",
                self.a
            )))
        }
    }
}

/// Smallest floor admissible under Condition 2: `2 tau + L / (1 - eta)`.
pub fn min_floor_condition2(tau: f64, lipschitz: f64, eta: f64) -> f64 {
    2.0 * tau + lipschitz / (1.0 - eta)
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceEntry {
    pub k: usize,
    /// `lambda_min(Q_k) - a`.
    pub floor_margin: f64,
    /// `lambda_min((1 + psi_{k-1}) Q_{k-1} - Q_k)`; `None` at `k = 0`.
    pub order_margin: Option<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceReport {
    pub entries: Vec<SequenceEntry>,
    /// `max_k |Q_k|`.
    pub b_hat: f64,
    /// `prod_{i < K} (1 + psi_i)` over the observed range.
    pub zeta_hat: f64,
    pub norm_q0: f64,
    pub floor_ok: bool,
    pub order_ok: bool,
    /// `b_hat <= zeta_hat * |Q_0| + tol`.
    pub bound_ok: bool,
}

impl SequenceReport {
    pub fn passed(&self) -> bool {
        self.floor_ok && self.order_ok && self.bound_ok
    }
}

/// Checks the floor and ordering conditions over an observed sequence.
/// `psi[k]` is the slack between `Q_k` and `Q_{k+1}`.
pub fn validate_sequence(qs: &[Metric], a: f64, psi: &[f64], tol: f64) -> Result<SequenceReport> {
    let Some(first) = qs.first() else {
        return Ok(SequenceReport {
            entries: Vec::new(),
            b_hat: 0.0,
            zeta_hat: 1.0,
            norm_q0: 0.0,
            floor_ok: true,
            order_ok: true,
            bound_ok: true,
        });
    };
    if psi.len() + 1 < qs.len() {
        return Err(Error::DimensionMismatch {
            expected: qs.len() - 1,
            found: psi.len(),
        });
    }
    let mut entries = Vec::with_capacity(qs.len());
    let mut zeta = 1.0;
    let mut b_hat = 0.0_f64;
    for (k, q) in qs.iter().enumerate() {
        if q.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: q.dim(),
            });
        }
        let order_margin = (k > 0).then(|| order_margin(&qs[k - 1], q, psi[k - 1]));
        if k > 0 {
            zeta *= 1.0 + psi[k - 1];
        }
        let norm = q.norm();
        b_hat = b_hat.max(norm);
        entries.push(SequenceEntry {
            k,
            floor_margin: q.min_eigenvalue() - a,
            order_margin,
            norm,
        });
    }
    let norm_q0 = first.norm();
    Ok(SequenceReport {
        floor_ok: entries.iter().all(|e| e.floor_margin >= -tol),
        order_ok: entries.iter().all(|e| e.order_margin.is_none_or(|m| m >= -tol)),
        bound_ok: b_hat <= zeta * norm_q0 + tol,
        entries,
        b_hat,
        zeta_hat: zeta,
        norm_q0,
    })
}

/// `lambda_min((1 + psi) prev - next)`.
fn order_margin(prev: &Metric, next: &Metric, psi: f64) -> f64 {
    if prev.shares_basis(next) {
        // both are affine images of one base matrix: the difference is too
        let scale = (1.0 + psi) * prev.scale() - next.scale();
        let shift = (1.0 + psi) * prev.shift() - next.shift();
        prev.with_coefficients(scale, shift).min_eigenvalue()
    } else {
        min_eigenvalue(&(prev.to_dense() * (1.0 + psi) - next.to_dense()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn run_policy(p: &MetricPolicy, steps: usize) -> Vec<Metric> {
        let mut out: Vec<Metric> = Vec::new();
        for k in 0..steps {
            let q = p.next_matrix(k, out.last()).unwrap();
            out.push(q);
        }
        out
    }

    #[test]
    fn constant_policy_returns_q0() {
        let p = MetricPolicy::constant_identity(3, 2.0).unwrap();
        for q in run_policy(&p, 5) {
            assert_relative_eq!(q.to_dense(), DMatrix::identity(3, 3) * 2.0);
        }
    }

    #[test]
    fn inflated_policy_example() {
        let p = MetricPolicy::new(PolicyKind::Inflated, Metric::scaled_identity(2, 2.0).unwrap(), 2.0, 0.1).unwrap();
        let qs = run_policy(&p, 2);
        assert_relative_eq!(qs[1].to_dense(), DMatrix::identity(2, 2) * 2.2, epsilon = 1e-15);
    }

    #[test]
    fn shrink_at_floor_is_fixed_point() {
        let p = MetricPolicy::new(
            PolicyKind::ShrinkToFloor { weight: 0.3 },
            Metric::scaled_identity(2, 1.5).unwrap(),
            1.5,
            0.0,
        )
        .unwrap();
        for q in run_policy(&p, 10) {
            assert_relative_eq!(q.to_dense(), DMatrix::identity(2, 2) * 1.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn floor_violation_is_rejected() {
        let q0 = Metric::scaled_identity(2, 1.0).unwrap();
        assert!(matches!(
            MetricPolicy::new(PolicyKind::Constant, q0, 2.0, 0.0),
            Err(Error::FloorViolated { .. })
        ));
    }

    #[test]
    fn condition_checks() {
        let p = MetricPolicy::constant_identity(2, 8.02).unwrap();
        assert_relative_eq!(min_floor_condition2(0.01, 4.0, 0.5), 8.02, epsilon = 1e-15);
        assert!(p.check_condition2(0.01, 4.0, 0.5).is_ok());
        assert!(p.check_condition2(0.02, 4.0, 0.5).is_err());
        assert!(p.check_condition2(0.01, 4.0, 1.0).is_err());
        assert!(p.check_condition1(4.0).is_ok());
        assert!(p.check_condition1(4.01).is_err());
    }

    #[test]
    fn validate_examples() {
        let two = Metric::scaled_identity(2, 2.0).unwrap();
        let rep = validate_sequence(&[two.clone(), two.clone(), two.clone()], 2.0, &[0.0, 0.0], 1e-12).unwrap();
        assert!(rep.passed());
        assert_relative_eq!(rep.b_hat, 2.0);

        let ok = validate_sequence(&[two.clone(), two.affine(1.1, 0.0)], 2.0, &[0.1], 1e-12).unwrap();
        assert!(ok.passed());
        let bad = validate_sequence(&[two.clone(), two.affine(1.15, 0.0)], 2.0, &[0.1], 1e-12).unwrap();
        assert!(!bad.order_ok);

        // same check through the dense path
        let dense = Metric::from_matrix(DMatrix::identity(2, 2) * 2.3).unwrap();
        let bad = validate_sequence(&[two, dense], 2.0, &[0.1], 1e-12).unwrap();
        assert!(!bad.order_ok);
        assert!(validate_sequence(&[], 1.0, &[], 0.0).unwrap().passed());
    }

    #[test]
    fn one_dimensional_metrics() {
        let p = MetricPolicy::new(PolicyKind::Inflated, Metric::scaled_identity(1, 3.0).unwrap(), 3.0, 0.5).unwrap();
        let qs = run_policy(&p, 20);
        let psi: Vec<f64> = (0..20).map(|k| p.psi(k)).collect();
        assert!(validate_sequence(&qs, 3.0, &psi, 1e-12).unwrap().passed());
    }

    fn arb_policy() -> impl Strategy<Value = MetricPolicy> {
        (
            prop::collection::vec(-1.0..1.0f64, 9),
            0.5..3.0f64,
            0.0..1.0f64,
            0..3usize,
            0.05..0.9f64,
        )
            .prop_map(|(raw, a, psi0, which, weight)| {
                let b = DMatrix::from_row_slice(3, 3, &raw);
                let q0 = Metric::from_matrix(&b * b.transpose() + DMatrix::identity(3, 3) * a).unwrap();
                let kind = match which {
                    0 => PolicyKind::Constant,
                    1 => PolicyKind::Inflated,
                    _ => PolicyKind::ShrinkToFloor { weight },
                };
                MetricPolicy::new(kind, q0, a, psi0).unwrap()
            })
    }

    proptest! {
        #[test]
        fn policies_respect_condition_one(p in arb_policy(), vs in prop::collection::vec(-2.0..2.0f64, 3 * 8)) {
            let qs = run_policy(&p, 30);
            let psi: Vec<f64> = (0..30).map(|k| p.psi(k)).collect();
            let rep = validate_sequence(&qs, p.floor(), &psi, 1e-10).unwrap();
            prop_assert!(rep.passed(), "{:?}", rep.entries.iter().find(|e| e.order_margin.unwrap_or(0.0) < -1e-10));
            prop_assert!(rep.zeta_hat <= (1.0 + p.psi_sum()).exp());
            for chunk in vs.chunks(3) {
                let v = DVector::from_column_slice(chunk);
                for k in 0..29 {
                    let lhs = qs[k + 1].quad_form(&v);
                    let rhs = (1.0 + psi[k]) * qs[k].quad_form(&v);
                    prop_assert!(lhs <= rhs + 1e-10 * v.norm_squared());
                }
            }
        }
    }
}
