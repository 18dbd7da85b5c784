#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod approx;
pub mod basis;
pub mod covariance;
pub mod empirical;
pub mod error;
pub mod evaluation;
pub mod gp_core;
pub mod optim;
pub mod parametric;
pub mod qp;
pub mod quadrature;
pub mod sieve_mle;
pub mod special;

pub use basis::SieveCovariance;
pub use covariance::IsotropicCovariance;
pub use error::{Error, Result};
pub use parametric::{Family, ParametricCovariance};
pub use quadrature::QuadratureConfig;
