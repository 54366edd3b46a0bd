//! End-to-end analysis of one (quantile level, contrast) pair:
//! pointwise fits, coupling covariance, curve estimate and bands.

use serde::Serialize;

use crate::bayes_gp::{
    credible_band, fit_hyper_with_noise, noise_covariance, posterior_mean, posterior_with_noise,
    HyperFit, HyperSearch,
};
use crate::coupling::{
    assemble_sigma, wavelet_smooth, CouplingCovariance, DiagonalMode,
};
use crate::dataset::{Contrast, FunctionalDataset};
use crate::error::{FqrError, Result};
use crate::estimators::{
    extract_contrast, presmooth_dataset, spline_interpolate, CurveEstimate, CurveMethod, Smoothing,
};
use crate::inference::{default_fold_threshold, flag_locations, simultaneous_band, BandResult};
use crate::qr::{fit_all_locations, PointwiseFit, QuantileLevel, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub alpha: f64,
    pub mc_draws: usize,
    pub wavelet_smooth: bool,
    pub diagonal_mode: DiagonalMode,
    pub fold_threshold: f64,
    /// The evaluation grid inserts `eval_refine - 1` points into every sampling interval.
    pub eval_refine: usize,
    pub gp_search: HyperSearch,
    pub presmooth: Smoothing,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            alpha: 0.05,
            mc_draws: 10_000,
            wavelet_smooth: true,
            diagonal_mode: DiagonalMode::Analytic,
            fold_threshold: default_fold_threshold(),
            eval_refine: 4,
            gp_search: HyperSearch::default(),
            presmooth: Smoothing::Gcv,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FqrError::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.mc_draws < 1000 {
            return Err(FqrError::InvalidArgument(format!(
                "mc_draws must be at least 1000, got {}",
                self.mc_draws
            )));
        }
        if self.eval_refine == 0 {
            return Err(FqrError::InvalidArgument("eval_refine must be positive".into()));
        }
        Ok(())
    }

    /// Copy whose sampler seed is tied to `seed`.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.solver.mcmc.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct CurveAnalysis {
    pub estimate: CurveEstimate,
    pub band: BandResult,
    pub covariance: CouplingCovariance,
    pub gp: Option<HyperFit>,
    pub warnings: Vec<String>,
}

/// Data the estimator sees: presmoothed responses for `presmooth-li`, raw otherwise.
pub fn working_dataset(
    ds: &FunctionalDataset,
    method: CurveMethod,
    cfg: &PipelineConfig,
) -> Result<FunctionalDataset> {
    match method {
        CurveMethod::PresmoothLi => presmooth_dataset(ds, cfg.presmooth),
        _ => Ok(ds.clone()),
    }
}

pub fn fit_stage(
    ds: &FunctionalDataset,
    tau: QuantileLevel,
    cfg: &PipelineConfig,
    parallelism: usize,
) -> Result<Vec<PointwiseFit>> {
    fit_all_locations(ds, tau, &cfg.solver, parallelism)
}

/// Coupling covariance, optionally wavelet-smoothed and rescaled back to `sigma_n(t)`.
pub fn covariance_stage(
    ds: &FunctionalDataset,
    fits: &[PointwiseFit],
    tau: QuantileLevel,
    contrast: &Contrast,
    cfg: &PipelineConfig,
) -> Result<CouplingCovariance> {
    let cov = assemble_sigma(ds, fits, tau, contrast, cfg.diagonal_mode)?;
    if cfg.wavelet_smooth {
        Ok(wavelet_smooth(&cov))
    } else {
        Ok(cov)
    }
}

/// Curve estimate and bands from fits and covariance already in hand.
/// `band_seed` drives the Monte Carlo critical value.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stage(
    ds: &FunctionalDataset,
    fits: &[PointwiseFit],
    cov: CouplingCovariance,
    tau: QuantileLevel,
    contrast: &Contrast,
    method: CurveMethod,
    cfg: &PipelineConfig,
    band_seed: u64,
) -> Result<CurveAnalysis> {
    let grid = ds.grid();
    let n = ds.n();
    let eval_grid = grid.refine(cfg.eval_refine);
    let nodes = extract_contrast(fits, contrast);
    let mut warnings = Vec::new();
    let (values, mut band, gp) = match method {
        CurveMethod::Li | CurveMethod::PresmoothLi | CurveMethod::Spline(_) => {
            let order = if let CurveMethod::Spline(r) = method { r } else { 1 };
            let values = spline_interpolate(grid, &nodes, order, eval_grid.points())?;
            let band = simultaneous_band(grid, &nodes, &cov, n, cfg.alpha, cfg.mc_draws, band_seed)?;
            (values, band, None)
        }
        CurveMethod::BayesGp => {
            let noise = noise_covariance(&cov, n);
            let fit = fit_hyper_with_noise(&nodes, grid, &noise, &cfg.gp_search)?;
            warnings.extend(fit.warnings.iter().cloned());
            let values = posterior_mean(&nodes, grid, &noise, &fit.hyper, eval_grid.points())?;
            let post = posterior_with_noise(&nodes, grid, &noise, &fit.hyper, grid.points())?;
            let band = credible_band(&post, cfg.alpha, cfg.mc_draws, band_seed)?;
            (values, band, Some(fit))
        }
    };
    band.flags = flag_locations(&band, cfg.fold_threshold);
    Ok(CurveAnalysis {
        estimate: CurveEstimate {
            method,
            eval_grid,
            values,
            tau,
            contrast: contrast.clone(),
        },
        band,
        covariance: cov,
        gp,
        warnings,
    })
}

/// Warning text when the grid is too sparse for the band theory (`T < sqrt(n)`).
pub fn density_warning(ds: &FunctionalDataset) -> Option<String> {
    let root_n = (ds.n() as f64).sqrt();
    ((ds.t_len() as f64) < root_n).then(|| {
        format!(
            "grid has T = {} locations, fewer than sqrt(n) = {:.1}; the bands assume T much larger than sqrt(n)",
            ds.t_len(),
            root_n
        )
    })
}

/// Full pipeline for one quantile level and contrast.
pub fn analyze(
    ds: &FunctionalDataset,
    tau: QuantileLevel,
    contrast: &Contrast,
    method: CurveMethod,
    cfg: &PipelineConfig,
    parallelism: usize,
) -> Result<CurveAnalysis> {
    cfg.validate()?;
    let work = working_dataset(ds, method, cfg)?;
    let fits = fit_stage(&work, tau, cfg, parallelism)?;
    let cov = covariance_stage(&work, &fits, tau, contrast, cfg)?;
    let mut out = estimate_stage(&work, &fits, cov, tau, contrast, method, cfg, cfg.seed)?;
    if let Some(w) = density_warning(ds) {
        out.warnings.insert(0, w);
    }
    Ok(out)
}
