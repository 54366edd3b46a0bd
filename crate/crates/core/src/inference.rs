//! Simultaneous bands, critical values and simultaneous band scores (SimBaS).
//!
//! The critical value `C_n(alpha)` is the empirical `(1 - alpha)` quantile of
//! `max_l |G_l| / sd_l` over Monte Carlo draws `G ~ MVN(0, Sigma)`. The same
//! draws give SimBaS, so `simbas_l <= alpha` holds exactly when the joint band
//! excludes zero at `l`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coupling::CouplingCovariance;
use crate::dataset::SamplingGrid;
use crate::error::{FqrError, Result};
use crate::linalg::GaussianFactor;
use crate::rng::substream;

/// Draws per independent random stream.
const BLOCK: usize = 512;

/// Default magnitude cut: half of `log2(1.5)`.
pub fn default_fold_threshold() -> f64 {
    0.5 * 1.5f64.log2()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(FqrError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Sorted Monte Carlo draws of `max_l |G_l| / sd_l`, `G ~ MVN(0, cov)`.
#[derive(Debug, Clone)]
pub struct SupDraws {
    sorted: Vec<f64>,
}

impl SupDraws {
    pub fn simulate(cov: &DMatrix<f64>, sd: &[f64], draws: usize, seed: u64) -> Result<Self> {
        if cov.nrows() != sd.len() {
            return Err(FqrError::DimensionMismatch(format!(
                "covariance is {}x{} but {} standard deviations were given",
                cov.nrows(),
                cov.ncols(),
                sd.len()
            )));
        }
        if draws == 0 {
            return Err(FqrError::InvalidArgument("need at least one draw".into()));
        }
        if let Some((l, v)) = sd.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(FqrError::NonPositiveVariance { location: l, value: *v });
        }
        let factor = GaussianFactor::new(cov)?;
        let t = sd.len();
        let inv_sd: Vec<f64> = sd.iter().map(|s| 1.0 / s).collect();
        let blocks = draws.div_ceil(BLOCK);
        let mut values: Vec<f64> = (0..blocks)
            .into_par_iter()
            .flat_map_iter(|b| {
                let mut rng = substream(seed, b as u64);
                let count = BLOCK.min(draws - b * BLOCK);
                let mut z = vec![0.0; t];
                let mut g = vec![0.0; t];
                let mut out = Vec::with_capacity(count);
                for _ in 0..count {
                    factor.sample_into(&mut rng, &mut z, &mut g);
                    let m = g
                        .iter()
                        .zip(&inv_sd)
                        .map(|(v, w)| (v * w).abs())
                        .fold(0.0, f64::max);
                    out.push(m);
                }
                out
            })
            .collect();
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Number of draws allowed to exceed the critical value.
    fn exceedances(&self, alpha: f64) -> usize {
        ((alpha * self.len() as f64) + 1e-9).floor() as usize
    }

    /// `(1 - alpha)` empirical quantile: the `(N - floor(alpha N))`-th order statistic.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let k = self.exceedances(alpha).min(self.len() - 1);
        self.sorted[self.len() - 1 - k]
    }

    /// Fraction of draws strictly above `stat`.
    pub fn tail_fraction(&self, stat: f64) -> f64 {
        let below = self.sorted.partition_point(|&m| m <= stat);
        (self.len() - below) as f64 / self.len() as f64
    }
}

/// `C_n(alpha)` for a coupling covariance, standardized by `sigma_n(t)`.
pub fn critical_value(
    cov: &CouplingCovariance,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(SupDraws::simulate(&cov.sigma, &cov.sigma_marginal, mc_draws, seed)?.critical_value(alpha))
}

#[derive(Debug, Clone, Serialize)]
pub struct BandResult {
    pub grid: Vec<f64>,
    /// Point estimate at the grid locations.
    pub estimate: Vec<f64>,
    /// Standard error of the estimate at each location.
    pub std_error: Vec<f64>,
    pub pointwise_lo: Vec<f64>,
    pub pointwise_hi: Vec<f64>,
    pub joint_lo: Vec<f64>,
    pub joint_hi: Vec<f64>,
    pub z_alpha: f64,
    pub c_n_alpha: f64,
    pub alpha: f64,
    pub simbas: Vec<f64>,
    /// Whether the joint band excludes zero at each location.
    pub excludes_zero: Vec<bool>,
    pub flags: Vec<bool>,
    pub mc_draws: usize,
    pub seed: u64,
}

impl BandResult {
    /// Joint band edges linearly interpolated onto `query`.
    pub fn joint_band_at(&self, query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = SamplingGrid::new(self.grid.clone())?;
        let lo = crate::estimators::linear_interpolate(&grid, &self.joint_lo, query)?;
        let hi = crate::estimators::linear_interpolate(&grid, &self.joint_hi, query)?;
        Ok((lo, hi))
    }
}

/// Band around `estimate` for a Gaussian error with covariance `cov` whose
/// standard deviations are `sd`; half-widths are `q * sd_l * scale`.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_band(
    grid: &[f64],
    estimate: &[f64],
    cov: &DMatrix<f64>,
    sd: &[f64],
    scale: f64,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<BandResult> {
    check_alpha(alpha)?;
    if estimate.len() != grid.len() || sd.len() != grid.len() {
        return Err(FqrError::DimensionMismatch(format!(
            "estimate ({}) and sd ({}) must match the grid ({})",
            estimate.len(),
            sd.len(),
            grid.len()
        )));
    }
    let draws = SupDraws::simulate(cov, sd, mc_draws, seed)?;
    let c = draws.critical_value(alpha);
    let z = normal_quantile(1.0 - alpha / 2.0);
    let se: Vec<f64> = sd.iter().map(|s| s * scale).collect();
    let stats: Vec<f64> = estimate
        .iter()
        .zip(&se)
        .map(|(e, s)| e.abs() / s)
        .collect();
    let simbas: Vec<f64> = stats.iter().map(|&s| draws.tail_fraction(s)).collect();
    let excludes_zero: Vec<bool> = stats.iter().map(|&s| s >= c).collect();
    let band = |q: f64, sign: f64| -> Vec<f64> {
        estimate.iter().zip(&se).map(|(e, s)| e + sign * q * s).collect()
    };
    let mut out = BandResult {
        grid: grid.to_vec(),
        estimate: estimate.to_vec(),
        pointwise_lo: band(z, -1.0),
        pointwise_hi: band(z, 1.0),
        joint_lo: band(c, -1.0),
        joint_hi: band(c, 1.0),
        std_error: se.clone(),
        z_alpha: z,
        c_n_alpha: c,
        alpha,
        simbas,
        excludes_zero,
        flags: Vec::new(),
        mc_draws,
        seed,
    };
    out.flags = flag_locations(&out, default_fold_threshold());
    Ok(out)
}

/// Joint and pointwise bands `est -/+ q sigma_n(t) / sqrt(n)`.
pub fn simultaneous_band(
    grid: &SamplingGrid,
    estimate: &[f64],
    cov: &CouplingCovariance,
    n: usize,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<BandResult> {
    gaussian_band(
        grid.points(),
        estimate,
        &cov.sigma,
        &cov.sigma_marginal,
        1.0 / (n as f64).sqrt(),
        alpha,
        mc_draws,
        seed,
    )
}

/// Simultaneous band scores: the fraction of sup-statistic draws above
/// `sqrt(n) |est_l| / sigma_n(t_l)`.
pub fn simbas(
    estimate: &[f64],
    cov: &CouplingCovariance,
    n: usize,
    mc_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if estimate.len() != cov.len() {
        return Err(FqrError::DimensionMismatch(format!(
            "{} estimates for a {}-point covariance",
            estimate.len(),
            cov.len()
        )));
    }
    let draws = SupDraws::simulate(&cov.sigma, &cov.sigma_marginal, mc_draws, seed)?;
    let root_n = (n as f64).sqrt();
    Ok(estimate
        .iter()
        .zip(&cov.sigma_marginal)
        .map(|(e, s)| draws.tail_fraction(root_n * e.abs() / s))
        .collect())
}

/// Flags locations where the joint band excludes zero and `|est| > threshold`.
pub fn flag_locations(band: &BandResult, fold_threshold: f64) -> Vec<bool> {
    band.estimate
        .iter()
        .zip(&band.excludes_zero)
        .map(|(e, &x)| x && e.abs() > fold_threshold)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_threshold_value() {
        assert!((default_fold_threshold() - 0.29248).abs() < 1e-5);
    }

    #[test]
    fn quantile_indexing() {
        let d = SupDraws {
            sorted: (1..=100).map(|v| v as f64).collect(),
        };
        assert_eq!(d.critical_value(0.05), 95.0);
        assert_eq!(d.tail_fraction(95.0), 0.05);
        assert_eq!(d.tail_fraction(0.0), 1.0);
    }

    #[test]
    fn pointwise_half_width() {
        let cov = DMatrix::identity(2, 2);
        let b = gaussian_band(&[0.0, 1.0], &[0.0, 0.0], &cov, &[1.0, 1.0], 0.1, 0.05, 2000, 1).unwrap();
        assert!((b.pointwise_hi[0] - 0.196).abs() < 1e-3);
        assert_eq!(b.joint_lo[0], -b.joint_hi[0]);
        assert_eq!(b.simbas, vec![1.0, 1.0]);
    }

    #[test]
    fn flags_need_both_criteria() {
        let b = BandResult {
            grid: vec![0.0, 1.0, 2.0],
            estimate: vec![0.0, 1.0, 0.1],
            std_error: vec![1.0; 3],
            pointwise_lo: vec![0.0; 3],
            pointwise_hi: vec![0.0; 3],
            joint_lo: vec![-1.0, 0.5, 0.05],
            joint_hi: vec![1.0, 1.5, 0.15],
            z_alpha: 1.96,
            c_n_alpha: 2.0,
            alpha: 0.05,
            simbas: vec![1.0, 0.0, 0.0],
            excludes_zero: vec![false, true, true],
            flags: vec![],
            mc_draws: 0,
            seed: 0,
        };
        assert_eq!(flag_locations(&b, default_fold_threshold()), vec![false, true, false]);
    }
}
