//! Transfer learning for scalar-on-function linear regression.
//!
//! Slopes are estimated in a reproducing kernel Hilbert space `H(K)`:
//!
//! * [`flr`] fits the single-task penalized estimator;
//! * [`transfer`] pools sources with the target and then corrects the pooled
//!   slope on the target alone;
//! * [`aggregate`] ranks sources by a truncated RKHS distance, builds nested
//!   candidate source sets and aggregates the resulting fits on held-out
//!   target data;
//! * [`simgen`] and [`risk`] generate synthetic benchmarks and measure excess
//!   risk.

pub mod aggregate;
pub mod error;
pub mod fda;
pub mod flr;
pub mod kernels;
pub(crate) mod linalg;
pub mod risk;
pub mod simgen;
pub mod transfer;

pub use error::{Error, Result};
pub use fda::{Curve, TaskDataset};
pub use flr::{BetaEstimate, FitOptions, LambdaRule, LinearModel, RidgeFit, Slope};
pub use kernels::{Domain, EigenSystem, KernelKind, KernelSpec, MaternNu};
