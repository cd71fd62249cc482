//! Regularized quadratic-model methods for unconstrained minimization using
//! only function values and gradients, with runtime checks of the convergence
//! certificates (model decrease, step summability, variable-metric
//! quasi-Fejér monotonicity and the convex `O(1/k)` rate).

pub mod audit;
pub mod driver;
pub mod error;
pub mod fejer;
pub mod linalg;
pub mod metric_policy;
pub mod model;
pub mod problems;
pub mod subsolver;

pub use driver::{AcceptanceRule, Algorithm, IterationRecord, SigmaRule, SolverConfig, Status, SubsolverChoice, Trace};
pub use error::{Error, Result};
pub use fejer::FejerCertificate;
pub use linalg::Metric;
pub use metric_policy::{MetricPolicy, PolicyKind};
pub use model::ModelState;
pub use problems::{Convexity, ProblemInstance};
