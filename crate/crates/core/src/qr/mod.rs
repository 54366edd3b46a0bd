//! Per-location quantile M-estimation.
//!
//! Each grid location is solved independently: an interior-point solver for
//! the check-loss minimizer and a random-walk Metropolis sampler for the
//! asymmetric-Laplace posterior covariance `V_hat`, which estimates
//! `J_tau(t)^{-1} / n`.

mod loss;
mod mcmc;
mod pointwise;
mod solver;

pub use loss::{check_loss, objective, psi, subgradient_norm, QuantileLevel};
pub use mcmc::{al_posterior_cov, al_posterior_cov_at, McmcConfig, PosteriorSample};
pub use pointwise::{fit_all_locations, fit_location, PointwiseFit, SolverConfig};
pub use solver::{solve_quantile_regression, LpSolution};
