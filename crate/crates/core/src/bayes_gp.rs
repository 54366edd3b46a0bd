//! Gaussian-process smoothing of pointwise estimates.
//!
//! Prior `mu ~ GP(0, K)` with `K(s, t) = theta_sigma exp(-(t - s)^2 / theta_l)`,
//! observed through `mu_hat(t) | mu ~ MVN(mu(t), Sigma / n)`. Hyperparameters
//! maximize the marginal likelihood, then `theta_l` is adjusted by `log(T)`
//! (divided by default, which shortens the length-scale).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::CouplingCovariance;
use crate::dataset::SamplingGrid;
use crate::error::{FqrError, Result};
use crate::inference::{gaussian_band, BandResult};
use crate::linalg::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogTAdjustment {
    /// `theta_l * log(T)`.
    Multiply,
    /// `theta_l / log(T)`.
    #[default]
    Divide,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpHyper {
    pub theta_sigma: f64,
    /// Squared length-scale in the units of the grid.
    pub theta_l: f64,
    pub adjusted: bool,
}

impl GpHyper {
    pub fn new(theta_sigma: f64, theta_l: f64) -> Result<Self> {
        if !(theta_sigma > 0.0 && theta_l > 0.0) || !theta_sigma.is_finite() || !theta_l.is_finite()
        {
            return Err(FqrError::InvalidArgument(format!(
                "GP hyperparameters must be positive, got ({theta_sigma}, {theta_l})"
            )));
        }
        Ok(Self {
            theta_sigma,
            theta_l,
            adjusted: false,
        })
    }
}

pub fn se_kernel(s: f64, t: f64, hyper: &GpHyper) -> f64 {
    let d = t - s;
    hyper.theta_sigma * (-(d * d) / hyper.theta_l).exp()
}

pub fn kernel_matrix(a: &[f64], b: &[f64], hyper: &GpHyper) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| se_kernel(a[i], b[j], hyper))
}

fn jitter(hyper: &GpHyper) -> f64 {
    // trace(K) / T is theta_sigma for the squared-exponential kernel.
    1e-10 * hyper.theta_sigma
}

/// Cholesky factor of `noise + K(t, t) + jitter I`.
fn total_factor(
    grid: &[f64],
    noise: &DMatrix<f64>,
    hyper: &GpHyper,
) -> Result<Cholesky<f64, Dyn>> {
    let mut a = kernel_matrix(grid, grid, hyper) + noise;
    let j = jitter(hyper);
    for i in 0..grid.len() {
        a[(i, i)] += j;
    }
    symmetrize(&mut a);
    a.cholesky().ok_or_else(|| {
        FqrError::Factorization(format!(
            "GP marginal covariance is not positive definite at theta = ({:e}, {:e})",
            hyper.theta_sigma, hyper.theta_l
        ))
    })
}

fn check_lengths(mu_hat: &[f64], grid: &[f64], noise: &DMatrix<f64>) -> Result<()> {
    if mu_hat.len() != grid.len() || noise.nrows() != grid.len() || noise.ncols() != grid.len() {
        return Err(FqrError::DimensionMismatch(format!(
            "mu_hat ({}), grid ({}) and noise ({}x{}) disagree",
            mu_hat.len(),
            grid.len(),
            noise.nrows(),
            noise.ncols()
        )));
    }
    Ok(())
}

/// `Sigma / n` for a coupling covariance.
pub fn noise_covariance(cov: &CouplingCovariance, n: usize) -> DMatrix<f64> {
    &cov.sigma / n as f64
}

/// Log density of `mu_hat` under `MVN(0, noise + K)`.
pub fn marginal_loglik_with_noise(
    mu_hat: &[f64],
    grid: &[f64],
    noise: &DMatrix<f64>,
    hyper: &GpHyper,
) -> Result<f64> {
    check_lengths(mu_hat, grid, noise)?;
    let chol = total_factor(grid, noise, hyper)?;
    let y = DVector::from_column_slice(mu_hat);
    let mut w = y.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let t = grid.len() as f64;
    Ok(-0.5 * w.norm_squared() - logdet - 0.5 * t * (2.0 * std::f64::consts::PI).ln())
}

pub fn marginal_loglik(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    cov: &CouplingCovariance,
    n: usize,
    hyper: &GpHyper,
) -> Result<f64> {
    marginal_loglik_with_noise(mu_hat, grid.points(), &noise_covariance(cov, n), hyper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperSearch {
    pub sigma_points: usize,
    pub length_points: usize,
    pub refinements: usize,
    pub adjustment: LogTAdjustment,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            sigma_points: 25,
            length_points: 25,
            refinements: 20,
            adjustment: LogTAdjustment::Divide,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperFit {
    /// Hyperparameters after the `log(T)` adjustment.
    pub hyper: GpHyper,
    /// Maximum marginal likelihood estimate before adjustment.
    pub mmle: GpHyper,
    pub loglik: f64,
    pub adjustment: LogTAdjustment,
    pub warnings: Vec<String>,
}

fn log_space(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![(lo.ln() + hi.ln()) / 2.0];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
        .collect()
}

pub fn fit_hyper_with_noise(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    noise: &DMatrix<f64>,
    search: &HyperSearch,
) -> Result<HyperFit> {
    let pts = grid.points();
    check_lengths(mu_hat, pts, noise)?;
    let t = pts.len();
    if t < 4 {
        return Err(FqrError::GridTooShort(t));
    }
    if search.sigma_points < 2 || search.length_points < 2 {
        return Err(FqrError::InvalidArgument("hyperparameter grid needs ≥ 2 points per axis".into()));
    }
    let mean = mu_hat.iter().sum::<f64>() / t as f64;
    let mut v_hat = mu_hat.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    if !(v_hat > 0.0) {
        // Zero signal: anchor the amplitude range at the noise level instead.
        v_hat = (noise.trace() / t as f64).max(f64::MIN_POSITIVE.sqrt());
    }
    let s_bounds = ((1e-4 * v_hat).ln(), (1e2 * v_hat).ln());
    let gap = grid.max_gap();
    let l_bounds = ((gap * gap).ln(), grid.domain_length().powi(2).ln());

    let eval = |ls: f64, ll: f64| -> f64 {
        let h = GpHyper {
            theta_sigma: ls.exp(),
            theta_l: ll.exp(),
            adjusted: false,
        };
        marginal_loglik_with_noise(mu_hat, pts, noise, &h).unwrap_or(f64::NEG_INFINITY)
    };

    let s_axis = log_space(s_bounds.0.exp(), s_bounds.1.exp(), search.sigma_points);
    let l_axis = log_space(l_bounds.0.exp(), l_bounds.1.exp(), search.length_points);
    let cells: Vec<(f64, f64)> = s_axis
        .iter()
        .flat_map(|&s| l_axis.iter().map(move |&l| (s, l)))
        .collect();
    let values: Vec<f64> = cells.par_iter().map(|&(s, l)| eval(s, l)).collect();
    let (best_idx, mut best) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !best.is_finite() {
        return Err(FqrError::Factorization(
            "marginal likelihood is not finite anywhere on the hyperparameter grid".into(),
        ));
    }
    let (mut ls, mut ll) = cells[best_idx];

    let mut step = [
        (s_bounds.1 - s_bounds.0) / (search.sigma_points - 1) as f64,
        (l_bounds.1 - l_bounds.0) / (search.length_points - 1) as f64,
    ];
    for _ in 0..search.refinements {
        let mut moved = false;
        for axis in 0..2 {
            for dir in [-1.0, 1.0] {
                let (cs, cl) = if axis == 0 {
                    ((ls + dir * step[0]).clamp(s_bounds.0, s_bounds.1), ll)
                } else {
                    (ls, (ll + dir * step[1]).clamp(l_bounds.0, l_bounds.1))
                };
                let v = eval(cs, cl);
                if v > best {
                    best = v;
                    ls = cs;
                    ll = cl;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            step[0] /= 2.0;
            step[1] /= 2.0;
        }
    }

    let mut warnings = Vec::new();
    let near = |v: f64, b: f64| (v - b).abs() < 1e-9 * (1.0 + b.abs());
    if near(ls, s_bounds.0) || near(ls, s_bounds.1) {
        warnings.push(format!(
            "theta_sigma estimate {:e} is on the search boundary",
            ls.exp()
        ));
    }
    if near(ll, l_bounds.0) || near(ll, l_bounds.1) {
        warnings.push(format!("theta_l estimate {:e} is on the search boundary", ll.exp()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mmle = GpHyper {
        theta_sigma: ls.exp(),
        theta_l: ll.exp(),
        adjusted: false,
    };
    let log_t = (t as f64).ln();
    let hyper = match search.adjustment {
        LogTAdjustment::Multiply => GpHyper {
            theta_l: mmle.theta_l * log_t,
            adjusted: true,
            ..mmle
        },
        LogTAdjustment::Divide => GpHyper {
            theta_l: mmle.theta_l / log_t,
            adjusted: true,
            ..mmle
        },
        LogTAdjustment::None => mmle,
    };
    Ok(HyperFit {
        hyper,
        mmle,
        loglik: best,
        adjustment: search.adjustment,
        warnings,
    })
}

pub fn fit_hyper(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    cov: &CouplingCovariance,
    n: usize,
    search: &HyperSearch,
) -> Result<HyperFit> {
    fit_hyper_with_noise(mu_hat, grid, &noise_covariance(cov, n), search)
}

#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub eval_grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub hyper: GpHyper,
    pub noise_cov_used: DMatrix<f64>,
}

fn check_eval(grid: &SamplingGrid, eval: &[f64]) -> Result<()> {
    if let Some(&v) = eval.iter().find(|&&v| !grid.contains(v)) {
        return Err(FqrError::OutOfDomain {
            value: v,
            lo: grid.first(),
            hi: grid.last(),
        });
    }
    Ok(())
}

/// Posterior mean `K(e, t) (noise + K(t, t))^{-1} mu_hat` only.
pub fn posterior_mean(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    noise: &DMatrix<f64>,
    hyper: &GpHyper,
    eval_grid: &[f64],
) -> Result<Vec<f64>> {
    let pts = grid.points();
    check_lengths(mu_hat, pts, noise)?;
    check_eval(grid, eval_grid)?;
    let chol = total_factor(pts, noise, hyper)?;
    let alpha = chol.solve(&DVector::from_column_slice(mu_hat));
    let k_et = kernel_matrix(eval_grid, pts, hyper);
    Ok((k_et * alpha).iter().copied().collect())
}

pub fn posterior_with_noise(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    noise: &DMatrix<f64>,
    hyper: &GpHyper,
    eval_grid: &[f64],
) -> Result<GpPosterior> {
    let pts = grid.points();
    check_lengths(mu_hat, pts, noise)?;
    check_eval(grid, eval_grid)?;
    let chol = total_factor(pts, noise, hyper)?;
    let k_et = kernel_matrix(eval_grid, pts, hyper);
    let alpha = chol.solve(&DVector::from_column_slice(mu_hat));
    let mean: Vec<f64> = (&k_et * alpha).iter().copied().collect();
    let mut w = k_et.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let mut cov = kernel_matrix(eval_grid, eval_grid, hyper) - w.transpose() * &w;
    symmetrize(&mut cov);
    let j = jitter(hyper);
    for i in 0..eval_grid.len() {
        cov[(i, i)] = cov[(i, i)].max(0.0) + j;
    }
    Ok(GpPosterior {
        eval_grid: eval_grid.to_vec(),
        mean,
        cov,
        hyper: *hyper,
        noise_cov_used: noise.clone(),
    })
}

pub fn posterior(
    mu_hat: &[f64],
    grid: &SamplingGrid,
    cov: &CouplingCovariance,
    n: usize,
    hyper: &GpHyper,
    eval_grid: &[f64],
) -> Result<GpPosterior> {
    posterior_with_noise(mu_hat, grid, &noise_covariance(cov, n), hyper, eval_grid)
}

/// Simultaneous credible band from posterior draws of
/// `max_t |draw(t) - mean(t)| / sd(t)`.
pub fn credible_band(post: &GpPosterior, alpha: f64, draws: usize, seed: u64) -> Result<BandResult> {
    let sd: Vec<f64> = (0..post.cov.nrows()).map(|i| post.cov[(i, i)].sqrt()).collect();
    gaussian_band(&post.eval_grid, &post.mean, &post.cov, &sd, 1.0, alpha, draws, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let h = GpHyper::new(1.0, 1.0).unwrap();
        assert_eq!(se_kernel(0.3, 0.3, &h), 1.0);
        assert!((se_kernel(0.0, 1.0, &h) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((se_kernel(0.0, 1.0, &h) - 0.3679).abs() < 1e-4);
        assert!(GpHyper::new(0.0, 1.0).is_err());
    }

    #[test]
    fn single_point_standard_normal() {
        let h = GpHyper::new(0.5, 1.0).unwrap();
        let noise = DMatrix::from_element(1, 1, 0.5 - jitter(&h));
        let ll = marginal_loglik_with_noise(&[0.0], &[0.0], &noise, &h).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);
    }
}
