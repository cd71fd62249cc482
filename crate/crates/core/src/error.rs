use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the solvers and the certificate checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("eigenvalue floor violated at k = {k}: smallest eigenvalue {min_eigenvalue:e} < a = {floor:e}")]
    FloorViolated { k: usize, min_eigenvalue: f64, floor: f64 },

    #[error("secular root finder failed: {0}")]
    Secular(String),

    #[error("descent subsolver exhausted {iterations} inner iterations (model gradient norm {residual:e})")]
    InnerIterations {
        iterations: usize,
        residual: f64,
        last: DVector<f64>,
    },

    #[error("trial step violates the inexactness test: |grad m(s)| = {model_grad_norm:e} > {bound:e}")]
    InexactStep { model_grad_norm: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("reference point is outside the target set: f(y) = {f_y} exceeds final objective {f_final}")]
    NotInTargetSet { f_y: f64, f_final: f64 },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("malformed data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
