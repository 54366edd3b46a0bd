use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::loss::{subgradient_norm, QuantileLevel};
use super::mcmc::{al_posterior_cov_at, McmcConfig};
use super::solver::{solve_quantile_regression, LpSolution};
use crate::dataset::FunctionalDataset;
use crate::error::{FqrError, Result};
use crate::parallel::with_threads;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Relative duality-gap tolerance of the interior-point solver.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub mcmc: McmcConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            mcmc: McmcConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(FqrError::InvalidArgument("tolerance must be positive".into()));
        }
        self.mcmc.validate()
    }
}

/// Check-loss fit and scaled posterior covariance at one grid location.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseFit {
    pub location_index: usize,
    pub beta_hat: Vec<f64>,
    /// Posterior covariance of beta under the asymmetric-Laplace working likelihood.
    pub v_hat: DMatrix<f64>,
    pub objective: f64,
    pub subgrad_norm: f64,
    pub acceptance: f64,
}

pub(crate) fn point_estimate(
    ds: &FunctionalDataset,
    l: usize,
    tau: QuantileLevel,
    cfg: &SolverConfig,
) -> Result<LpSolution> {
    if l >= ds.t_len() {
        return Err(FqrError::InvalidArgument(format!(
            "location {l} out of range (T = {})",
            ds.t_len()
        )));
    }
    let sol = solve_quantile_regression(
        ds.location(l),
        ds.design().as_slice(),
        ds.d(),
        tau,
        cfg.tolerance,
        cfg.max_iterations,
    );
    if !sol.converged {
        return Err(FqrError::NonConvergence {
            location: l,
            iterations: sol.iterations,
            objective: sol.objective,
            gap: sol.gap,
            beta: sol.beta,
        });
    }
    Ok(sol)
}

/// Fits location `l` (0-based).
pub fn fit_location(
    ds: &FunctionalDataset,
    l: usize,
    tau: QuantileLevel,
    cfg: &SolverConfig,
) -> Result<PointwiseFit> {
    cfg.validate()?;
    let sol = point_estimate(ds, l, tau, cfg)?;
    let y = ds.location(l);
    let x = ds.design().as_slice();
    let post = al_posterior_cov_at(y, x, ds.d(), &sol.beta, tau, &cfg.mcmc, l)?;
    let subgrad_norm = subgradient_norm(y, x, &sol.beta, tau);
    Ok(PointwiseFit {
        location_index: l,
        beta_hat: sol.beta,
        v_hat: post.cov,
        objective: sol.objective,
        subgrad_norm,
        acceptance: post.acceptance,
    })
}

/// Fits every grid location; `parallelism = 0` uses the current thread pool.
pub fn fit_all_locations(
    ds: &FunctionalDataset,
    tau: QuantileLevel,
    cfg: &SolverConfig,
    parallelism: usize,
) -> Result<Vec<PointwiseFit>> {
    cfg.validate()?;
    let results: Vec<Result<PointwiseFit>> = with_threads(parallelism, || {
        (0..ds.t_len())
            .into_par_iter()
            .map(|l| fit_location(ds, l, tau, cfg))
            .collect()
    });
    let mut fits = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((l, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(fits)
    } else {
        Err(FqrError::LocationFailures(failures))
    }
}
