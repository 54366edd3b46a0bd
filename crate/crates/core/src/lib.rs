//! Distributed function-on-scalar quantile regression.
//!
//! The pipeline fits a quantile regression separately at every grid location,
//! estimates the covariance of the coupling Gaussian process that approximates
//! the pointwise estimates, and turns the pointwise estimates into a
//! coefficient-function estimate with pointwise and simultaneous bands.

pub mod bayes_gp;
pub mod coupling;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod parallel;
pub mod pipeline;
pub mod qr;
pub mod rng;
pub mod simlab;
pub mod wavelet;

pub use error::{FqrError, Result};
