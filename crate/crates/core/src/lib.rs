//! Quadratic variations of isotropic Gaussian fields sampled along a meridian.

pub mod covariance;
pub mod estimators;
pub mod harness;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod quadrature;
pub mod simulate;
pub mod specfun;

pub use error::{Error, Result};
