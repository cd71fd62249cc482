//! Dense symmetric matrices with a cached eigendecomposition.
//!
//! Every metric produced during a run is an affine image `scale * B + shift * I`
//! of one base matrix `B`, so all of them share the eigenvectors of `B`. The
//! decomposition is computed once and reused by the subsolver and by the
//! certificate checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Relative asymmetry tolerated when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

struct Basis {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

/// Symmetric matrix `Q = scale * B + shift * I`.
#[derive(Clone)]
pub struct Metric {
    basis: Arc<Basis>,
    scale: f64,
    shift: f64,
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Metric")
            .field("dim", &self.dim())
            .field("scale", &self.scale)
            .field("shift", &self.shift)
            .field("eigenvalues", &self.eigenvalues().as_slice())
            .finish()
    }
}

impl Metric {
    /// Wraps a symmetric matrix, rejecting non-square, non-finite or
    /// asymmetric input.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        check_dim(matrix.nrows(), matrix.ncols())?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric matrix".into()));
        }
        let norm = matrix.norm();
        let asymmetry = (&matrix - matrix.transpose()).norm();
        if asymmetry > SYMMETRY_TOL * norm {
            return Err(Error::NotSymmetric {
                asymmetry: if norm > 0.0 { asymmetry / norm } else { asymmetry },
            });
        }
        let symmetric = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(symmetric.clone());
        Ok(Self {
            basis: Arc::new(Basis {
                matrix: symmetric,
                eigenvalues: eig.eigenvalues,
                eigenvectors: eig.eigenvectors,
            }),
            scale: 1.0,
            shift: 0.0,
        })
    }

    /// `c * I` in dimension `n`.
    pub fn scaled_identity(n: usize, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFinite("metric scale".into()));
        }
        let identity = Self {
            basis: Arc::new(Basis {
                matrix: DMatrix::identity(n, n),
                eigenvalues: DVector::from_element(n, 1.0),
                eigenvectors: DMatrix::identity(n, n),
            }),
            scale: 1.0,
            shift: 0.0,
        };
        Ok(identity.affine(c, 0.0))
    }

    /// Returns `scale * self + shift * I`, sharing the cached decomposition.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            scale: scale * self.scale,
            shift: scale * self.shift + shift,
        }
    }

    /// `scale * B + shift * I` for the base matrix `B` of `self`.
    pub fn with_coefficients(&self, scale: f64, shift: f64) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            scale,
            shift,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.eigenvalues.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn base_matrix(&self) -> &DMatrix<f64> {
        &self.basis.matrix
    }

    /// True when both metrics are affine images of the same base matrix.
    pub fn shares_basis(&self, other: &Metric) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.basis.eigenvalues.map(|l| self.scale * l + self.shift)
    }

    /// Orthonormal eigenvectors, one per column, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.basis.eigenvectors
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().max()
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.eigenvalues().amax()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        &self.basis.matrix * self.scale + DMatrix::identity(n, n) * self.shift
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        (&self.basis.matrix * v) * self.scale + v * self.shift
    }

    /// `v^T Q v`, i.e. the squared Q-norm of `v` when Q is positive definite.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.mul_vec(v))
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn to_eigen_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.eigenvectors.tr_mul(v)
    }

    pub fn from_eigen_coords(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.basis.eigenvectors * w
    }
}

/// Smallest eigenvalue of an arbitrary symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest eigenvalue of an arbitrary symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn affine_images_share_eigenvectors() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let q = Metric::from_matrix(m.clone()).unwrap();
        let p = q.affine(2.0, 0.5);
        assert!(p.shares_basis(&q));
        let dense = &m * 2.0 + DMatrix::identity(2, 2) * 0.5;
        assert_relative_eq!(p.to_dense(), dense, epsilon = 1e-14);
        let v = DVector::from_vec(vec![0.3, -1.2]);
        assert_relative_eq!(p.quad_form(&v), v.dot(&(&dense * &v)), epsilon = 1e-13);
        assert_relative_eq!(p.min_eigenvalue(), min_eigenvalue(&dense), epsilon = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(Metric::from_matrix(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn eigen_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let q = Metric::from_matrix(m).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let back = q.from_eigen_coords(&q.to_eigen_coords(&v));
        assert_relative_eq!(back, v, epsilon = 1e-13);
    }
}
