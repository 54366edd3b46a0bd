//! Covariance of the coupling Gaussian process for one contrast.
//!
//! For locations `l, j` the covariance is
//! `a' J_l^{-1} [ E_n X X' (1{Y(t_l) <= X'b_l} - tau)(1{Y(t_j) <= X'b_j} - tau) ] J_j^{-1} a`
//! with `J_l^{-1}` estimated as `n V_hat(t_l)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Contrast, FunctionalDataset};
use crate::error::{FqrError, Result};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::qr::{PointwiseFit, QuantileLevel};
use crate::wavelet::smooth_covariance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalMode {
    /// Diagonal taken from the cross-moment estimate itself (exact Gram matrix).
    Empirical,
    /// Diagonal replaced by the analytic marginal variance `sigma_n(t)^2`.
    Analytic,
}

#[derive(Debug, Clone)]
pub struct CouplingCovariance {
    pub sigma: DMatrix<f64>,
    /// Analytic marginal standard deviations `sigma_n(t_l)`.
    pub sigma_marginal: Vec<f64>,
    pub contrast: Contrast,
    pub tau: QuantileLevel,
    pub smoothed: bool,
    pub diagonal_mode: DiagonalMode,
    /// Diagonal shift added to restore positive definiteness (0 if none).
    pub psd_shift: f64,
}

impl CouplingCovariance {
    pub fn len(&self) -> usize {
        self.sigma_marginal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_marginal.is_empty()
    }
}

/// `J_tau(t_l)^{-1}` estimate `n V_hat(t_l)`, symmetrized.
pub fn j_inverse(fit: &PointwiseFit, n: usize) -> DMatrix<f64> {
    let mut m = &fit.v_hat * n as f64;
    symmetrize(&mut m);
    m
}

fn influence_direction(fit: &PointwiseFit, n: usize, contrast: &Contrast) -> DVector<f64> {
    j_inverse(fit, n) * contrast.as_vector()
}

/// Column `z_i(l) = a'J_l^{-1} X_i (1{Y_i(t_l) <= X_i'b_l} - tau)` for all subjects.
fn influence_column(
    ds: &FunctionalDataset,
    fit: &PointwiseFit,
    tau: QuantileLevel,
    contrast: &Contrast,
) -> Vec<f64> {
    let n = ds.n();
    let d = ds.d();
    let g = influence_direction(fit, n, contrast);
    let x = ds.design();
    let y = ds.location(fit.location_index);
    (0..n)
        .map(|i| {
            let fitted: f64 = (0..d).map(|k| x[(i, k)] * fit.beta_hat[k]).sum();
            let proj: f64 = (0..d).map(|k| x[(i, k)] * g[k]).sum();
            let ind = if y[i] <= fitted { 1.0 } else { 0.0 };
            proj * (ind - tau.value())
        })
        .collect()
}

fn find_fit(fits: &[PointwiseFit], l: usize) -> Result<&PointwiseFit> {
    fits.iter()
        .find(|f| f.location_index == l)
        .ok_or_else(|| FqrError::InvalidArgument(format!("no fit for location {l}")))
}

/// Single entry `(l, j)` of the plug-in covariance estimate.
pub fn cross_moment(
    ds: &FunctionalDataset,
    fits: &[PointwiseFit],
    l: usize,
    j: usize,
    tau: QuantileLevel,
    contrast: &Contrast,
) -> Result<f64> {
    let zl = influence_column(ds, find_fit(fits, l)?, tau, contrast);
    let zj = influence_column(ds, find_fit(fits, j)?, tau, contrast);
    Ok(zl.iter().zip(&zj).map(|(a, b)| a * b).sum::<f64>() / ds.n() as f64)
}

/// `tau (1 - tau) a'J_l^{-1} E_n[X X'] J_l^{-1} a`.
pub fn analytic_variance(
    ds: &FunctionalDataset,
    fit: &PointwiseFit,
    tau: QuantileLevel,
    contrast: &Contrast,
) -> f64 {
    let n = ds.n();
    let g = influence_direction(fit, n, contrast);
    let x = ds.design();
    let second_moment = x.transpose() * x / n as f64;
    let t = tau.value();
    t * (1.0 - t) * (g.transpose() * second_moment * &g)[(0, 0)]
}

/// Builds the `T x T` covariance from fits at every location.
pub fn assemble_sigma(
    ds: &FunctionalDataset,
    fits: &[PointwiseFit],
    tau: QuantileLevel,
    contrast: &Contrast,
    mode: DiagonalMode,
) -> Result<CouplingCovariance> {
    let t_len = ds.t_len();
    if fits.len() != t_len || fits.iter().enumerate().any(|(l, f)| f.location_index != l) {
        return Err(FqrError::DimensionMismatch(format!(
            "expected {t_len} fits ordered by location, got {}",
            fits.len()
        )));
    }
    if contrast.dim() != ds.d() {
        return Err(FqrError::DimensionMismatch(format!(
            "contrast has {} weights but design has {} columns",
            contrast.dim(),
            ds.d()
        )));
    }
    let n = ds.n();
    let columns: Vec<Vec<f64>> = fits
        .par_iter()
        .map(|f| influence_column(ds, f, tau, contrast))
        .collect();
    let z = DMatrix::from_fn(n, t_len, |i, l| columns[l][i]);
    let mut sigma = z.transpose() * &z / n as f64;
    symmetrize(&mut sigma);

    let mut marginal = Vec::with_capacity(t_len);
    for f in fits {
        let v = analytic_variance(ds, f, tau, contrast);
        if !(v > 0.0) || !v.is_finite() {
            return Err(FqrError::NonPositiveVariance {
                location: f.location_index,
                value: v,
            });
        }
        marginal.push(v.sqrt());
    }

    let mut psd_shift = 0.0;
    if mode == DiagonalMode::Analytic {
        for (l, s) in marginal.iter().enumerate() {
            sigma[(l, l)] = s * s;
        }
        if sigma.clone().cholesky().is_none() {
            let lmin = min_eigenvalue(&sigma);
            if lmin < 0.0 {
                psd_shift = lmin.abs() + 1e-10;
                log::info!(
                    "analytic-diagonal covariance is indefinite (lambda_min = {lmin:e}); adding diagonal shift {psd_shift:e}"
                );
                for l in 0..t_len {
                    sigma[(l, l)] += psd_shift;
                }
            }
        }
    }

    Ok(CouplingCovariance {
        sigma,
        sigma_marginal: marginal,
        contrast: contrast.clone(),
        tau,
        smoothed: false,
        diagonal_mode: mode,
        psd_shift,
    })
}

/// Wavelet-domain diagonal smoothing of `cov.sigma`. The marginal standard
/// deviations are taken from the smoothed diagonal so that band widths and
/// the sup-statistic use the same smoothed variances.
pub fn wavelet_smooth(cov: &CouplingCovariance) -> CouplingCovariance {
    let mut out = cov.clone();
    out.sigma = smooth_covariance(&cov.sigma);
    for (l, s) in out.sigma_marginal.iter_mut().enumerate() {
        let v = out.sigma[(l, l)];
        if v > 0.0 {
            *s = v.sqrt();
        }
    }
    out.smoothed = true;
    out
}
