//! Random-walk Metropolis sampler for the asymmetric-Laplace working posterior.
//!
//! Target: `p(beta | y) ∝ exp(-sum_i rho_tau(y_i - x_i'beta) / scale)` under a flat
//! prior. The sample covariance of the retained draws is `V_hat`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::loss::{check_loss, QuantileLevel};
use super::pointwise::SolverConfig;
use crate::dataset::FunctionalDataset;
use crate::error::{FqrError, Result};
use crate::rng::{derive_seed, substream};

const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPTANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McmcConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Scale of the asymmetric-Laplace working likelihood.
    pub al_scale: f64,
    /// Initial multiplier on the proposal standard deviation.
    pub proposal_scale: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: 12_000,
            burn_in: 2_000,
            al_scale: 1.0,
            proposal_scale: 1.0,
            seed: 0x5EED,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length <= self.burn_in {
            return Err(FqrError::InvalidArgument(format!(
                "chain_length ({}) must exceed burn_in ({})",
                self.chain_length, self.burn_in
            )));
        }
        if !(self.al_scale > 0.0 && self.proposal_scale > 0.0) {
            return Err(FqrError::InvalidArgument(
                "al_scale and proposal_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub cov: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Acceptance rate over the retained draws.
    pub acceptance: f64,
}

/// `V_hat` at location `l`, starting the chain at the check-loss minimizer.
pub fn al_posterior_cov(
    ds: &FunctionalDataset,
    l: usize,
    tau: QuantileLevel,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let fit = super::pointwise::point_estimate(ds, l, tau, cfg)?;
    let x = ds.design().as_slice();
    al_posterior_cov_at(ds.location(l), x, ds.d(), &fit.beta, tau, &cfg.mcmc, l).map(|s| s.cov)
}

fn lower_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

/// Runs the sampler for one location. `x_cols` is the column-major design.
pub fn al_posterior_cov_at(
    y: &[f64],
    x_cols: &[f64],
    d: usize,
    start: &[f64],
    tau: QuantileLevel,
    cfg: &McmcConfig,
    location: usize,
) -> Result<PosteriorSample> {
    cfg.validate()?;
    let n = y.len();
    let mut rng = substream(derive_seed(cfg.seed, location as u64), 0);
    let inv_scale = 1.0 / cfg.al_scale;

    // Initial proposal shape: (X'X)^{-1} scaled by the mean absolute residual.
    let x = DMatrix::from_column_slice(n, d, x_cols);
    let xtx = x.transpose() * &x;
    let mut resid: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..d).map(|j| x_cols[j * n + i] * start[j]).sum::<f64>())
        .collect();
    let spread = (resid.iter().map(|r| r.abs()).sum::<f64>() / n as f64).max(1e-8);
    let mut shape = xtx
        .clone()
        .try_inverse()
        .map(|m| m * spread)
        .and_then(|m| lower_factor(&m))
        .ok_or_else(|| FqrError::Factorization("X'X is singular".into()))?;
    let mut log_step = (cfg.proposal_scale * 2.38 / (d as f64).sqrt()).ln();

    let mut beta = start.to_vec();
    let mut loss: f64 = resid.iter().map(|&r| check_loss(r, tau)).sum();
    let mut cand_resid = vec![0.0; n];
    let mut xi = vec![0.0; d];
    let mut step = vec![0.0; d];

    let kept = cfg.chain_length - cfg.burn_in;
    let shape_start = cfg.burn_in / 4;
    let shape_end = cfg.burn_in / 2;
    let mut pilot: Vec<Vec<f64>> = Vec::new();
    let mut draws: Vec<f64> = Vec::with_capacity(kept * d);
    let mut batch_accept = 0usize;
    let mut kept_accept = 0usize;

    for iter in 0..cfg.chain_length {
        let scale = log_step.exp();
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for j in 0..d {
            step[j] = scale * (0..=j).map(|k| shape[(j, k)] * xi[k]).sum::<f64>();
        }
        cand_resid.copy_from_slice(&resid);
        for (j, &s) in step.iter().enumerate() {
            for (r, xv) in cand_resid.iter_mut().zip(&x_cols[j * n..(j + 1) * n]) {
                *r -= xv * s;
            }
        }
        let cand_loss: f64 = cand_resid.iter().map(|&r| check_loss(r, tau)).sum();
        let log_ratio = (loss - cand_loss) * inv_scale;
        let u: f64 = rng.random();
        let accepted = log_ratio >= 0.0 || u.ln() < log_ratio;
        if accepted {
            for j in 0..d {
                beta[j] += step[j];
            }
            std::mem::swap(&mut resid, &mut cand_resid);
            loss = cand_loss;
        }

        if iter < cfg.burn_in {
            batch_accept += accepted as usize;
            if (iter + 1) % ADAPT_BATCH == 0 {
                let rate = batch_accept as f64 / ADAPT_BATCH as f64;
                log_step += rate - TARGET_ACCEPTANCE;
                batch_accept = 0;
            }
            if iter >= shape_start && iter < shape_end {
                pilot.push(beta.clone());
            }
            if iter + 1 == shape_end && pilot.len() > 4 * d {
                let cov = sample_cov(&pilot, d).0;
                if let Some(l) = lower_factor(&cov) {
                    shape = l;
                    log_step = (2.38 / (d as f64).sqrt()).ln();
                }
            }
        } else {
            kept_accept += accepted as usize;
            draws.extend_from_slice(&beta);
        }
    }

    let acceptance = kept_accept as f64 / kept as f64;
    let rows: Vec<Vec<f64>> = draws.chunks(d).map(|c| c.to_vec()).collect();
    let (cov, mean) = sample_cov(&rows, d);
    if kept_accept == 0 || (0..d).any(|j| !(cov[(j, j)] > 0.0)) {
        return Err(FqrError::DegenerateChain {
            location,
            acceptance,
        });
    }
    Ok(PosteriorSample {
        cov,
        mean,
        acceptance,
    })
}

fn sample_cov(rows: &[Vec<f64>], d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let m = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / m;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for j in 0..d {
            let dj = r[j] - mean[j];
            for k in 0..=j {
                cov[(j, k)] += dj * (r[k] - mean[k]);
            }
        }
    }
    let denom = (m - 1.0).max(1.0);
    for j in 0..d {
        for k in 0..=j {
            let v = cov[(j, k)] / denom;
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    (cov, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn acceptance_is_in_tuned_range() {
        let y = normal_sample(500, 3);
        let x = vec![1.0; 500];
        let tau = QuantileLevel::new(0.5).unwrap();
        let s = al_posterior_cov_at(&y, &x, 1, &[0.0], tau, &McmcConfig::default(), 0).unwrap();
        assert!(s.acceptance > 0.2 && s.acceptance < 0.5, "{}", s.acceptance);
    }

    #[test]
    fn same_seed_same_covariance() {
        let y = normal_sample(200, 4);
        let x = vec![1.0; 200];
        let tau = QuantileLevel::new(0.5).unwrap();
        let cfg = McmcConfig {
            chain_length: 3000,
            burn_in: 500,
            ..Default::default()
        };
        let a = al_posterior_cov_at(&y, &x, 1, &[0.0], tau, &cfg, 3).unwrap();
        let b = al_posterior_cov_at(&y, &x, 1, &[0.0], QuantileLevel::new(0.5).unwrap(), &cfg, 3)
            .unwrap();
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn invalid_chain_settings() {
        let cfg = McmcConfig {
            chain_length: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
