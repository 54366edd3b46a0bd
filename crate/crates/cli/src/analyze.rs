use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use fqr_core::dataset::{load_dataset, summarize, write_matrix, Contrast, DatasetSummary, FunctionalDataset};
use fqr_core::estimators::CurveMethod;
use fqr_core::inference::default_fold_threshold;
use fqr_core::parallel::with_threads;
use fqr_core::pipeline::{
    covariance_stage, density_warning, estimate_stage, fit_stage, working_dataset, CurveAnalysis,
    PipelineConfig,
};
use fqr_core::qr::QuantileLevel;
use fqr_core::rng::derive_seed;

use crate::output::{ensure_dir, tau_label, timestamp, write_json};
use crate::{parse_adjustment, parse_diagonal_mode};

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// n x T response matrix.
    #[arg(long, required_unless_present = "replay")]
    pub responses: Option<PathBuf>,
    /// n x d design matrix (include an intercept column if wanted).
    #[arg(long, required_unless_present = "replay")]
    pub design: Option<PathBuf>,
    /// T sampling locations, one per row.
    #[arg(long, required_unless_present = "replay")]
    pub grid: Option<PathBuf>,
    /// Quantile level; repeat for several.
    #[arg(long = "tau", default_values_t = [0.5])]
    pub taus: Vec<f64>,
    /// Design column index or comma-separated weight vector; repeat for several.
    /// Defaults to column 1 (column 0 when the design has one column).
    #[arg(long = "contrast", allow_hyphen_values = true)]
    pub contrasts: Vec<String>,
    /// li, spline2, presmooth-li or bayes-gp.
    #[arg(long, default_value = "li")]
    pub method: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub mc_draws: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub wavelet_smooth: bool,
    /// analytic or empirical.
    #[arg(long, default_value = "analytic")]
    pub diagonal_mode: String,
    #[arg(long)]
    pub fold_threshold: Option<f64>,
    /// divide, multiply or none.
    #[arg(long, default_value = "divide")]
    pub gp_adjustment: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "FQR_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = "fqr-out")]
    pub out: PathBuf,
    /// Also write each coupling covariance as CSV.
    #[arg(long)]
    pub dump_sigma: bool,
    /// Re-run the configuration embedded in an earlier manifest.json.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

/// Fully resolved analysis settings, embedded in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub responses: String,
    pub design: String,
    pub grid: String,
    pub taus: Vec<f64>,
    pub contrasts: Vec<Vec<f64>>,
    pub method: String,
    pub alpha: f64,
    pub mc_draws: usize,
    pub wavelet_smooth: bool,
    pub diagonal_mode: String,
    pub fold_threshold: f64,
    pub gp_adjustment: String,
    pub seed: u64,
    pub dump_sigma: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GpSummary {
    pub theta_sigma: f64,
    pub theta_l: f64,
    pub mmle_theta_sigma: f64,
    pub mmle_theta_l: f64,
    pub loglik: f64,
    pub adjustment: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultBlock {
    pub tau: f64,
    pub contrast_index: usize,
    pub contrast: Vec<f64>,
    pub method: String,
    pub curve_csv: String,
    pub estimate_csv: String,
    pub alpha: f64,
    pub z_alpha: f64,
    pub c_n_alpha: f64,
    pub mc_draws: usize,
    pub band_seed: u64,
    pub sigma_smoothed: bool,
    pub psd_shift: f64,
    pub locations_excluding_zero: usize,
    pub locations_flagged: usize,
    pub min_simbas: f64,
    /// `simbas <= alpha` exactly where the joint band excludes zero.
    pub duality_holds: bool,
    pub gp: Option<GpSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    generated_at: u64,
    config: &'a AnalyzeConfig,
    dataset: &'a DatasetSummary,
    warnings: &'a [String],
    results: &'a [ResultBlock],
}

#[derive(Debug, Clone, Serialize)]
struct BlockTiming {
    tau: f64,
    contrast_index: usize,
    seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Timings {
    threads: usize,
    total_seconds: f64,
    fit_seconds: Vec<(f64, f64)>,
    blocks: Vec<BlockTiming>,
}

#[derive(Debug)]
pub struct AnalysisOutput {
    pub out_dir: PathBuf,
    pub config: AnalyzeConfig,
    pub results: Vec<ResultBlock>,
    pub analyses: Vec<CurveAnalysis>,
    pub warnings: Vec<String>,
}

fn path_string(p: &Option<PathBuf>, what: &str) -> Result<String> {
    p.as_ref()
        .map(|p| p.display().to_string())
        .ok_or_else(|| anyhow!("--{what} is required"))
}

fn parse_contrast(arg: &str, d: usize) -> Result<Vec<f64>> {
    let arg = arg.trim();
    if let Ok(idx) = arg.parse::<usize>() {
        if idx >= d {
            bail!("contrast index {idx} is out of range for a design with {d} columns");
        }
        let mut w = vec![0.0; d];
        w[idx] = 1.0;
        return Ok(w);
    }
    let w: Vec<f64> = arg
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("contrast {arg:?} is neither an index nor a weight vector"))?;
    if w.len() != d {
        bail!("contrast {arg:?} has {} weights but the design has {d} columns", w.len());
    }
    Ok(w)
}

fn resolve(args: &AnalyzeArgs) -> Result<(AnalyzeConfig, FunctionalDataset)> {
    if let Some(path) = &args.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let cfg: AnalyzeConfig = serde_json::from_value(
            v.get("config").cloned().ok_or_else(|| anyhow!("manifest has no config"))?,
        )?;
        let ds = load_dataset(Path::new(&cfg.responses), Path::new(&cfg.design), Path::new(&cfg.grid))
            .context("load stage")?;
        return Ok((cfg, ds));
    }
    let responses = path_string(&args.responses, "responses")?;
    let design = path_string(&args.design, "design")?;
    let grid = path_string(&args.grid, "grid")?;
    let ds = load_dataset(Path::new(&responses), Path::new(&design), Path::new(&grid))
        .context("load stage")?;
    let d = ds.d();
    let specs = if args.contrasts.is_empty() {
        vec![if d > 1 { "1".to_string() } else { "0".to_string() }]
    } else {
        args.contrasts.clone()
    };
    let contrasts = specs
        .iter()
        .map(|s| parse_contrast(s, d))
        .collect::<Result<Vec<_>>>()?;
    let cfg = AnalyzeConfig {
        responses,
        design,
        grid,
        taus: args.taus.clone(),
        contrasts,
        method: args.method.clone(),
        alpha: args.alpha,
        mc_draws: args.mc_draws,
        wavelet_smooth: args.wavelet_smooth,
        diagonal_mode: args.diagonal_mode.clone(),
        fold_threshold: args.fold_threshold.unwrap_or_else(default_fold_threshold),
        gp_adjustment: args.gp_adjustment.clone(),
        seed: args.seed,
        dump_sigma: args.dump_sigma,
    };
    Ok((cfg, ds))
}

fn pipeline_config(cfg: &AnalyzeConfig) -> Result<PipelineConfig> {
    let mut p = PipelineConfig {
        alpha: cfg.alpha,
        mc_draws: cfg.mc_draws,
        wavelet_smooth: cfg.wavelet_smooth,
        diagonal_mode: parse_diagonal_mode(&cfg.diagonal_mode)?,
        fold_threshold: cfg.fold_threshold,
        ..PipelineConfig::default()
    }
    .seeded(cfg.seed);
    p.gp_search.adjustment = parse_adjustment(&cfg.gp_adjustment)?;
    p.validate()?;
    Ok(p)
}

fn write_curve_csv(path: &Path, a: &CurveAnalysis) -> Result<()> {
    let b = &a.band;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["t", "estimate", "pw_lo", "pw_hi", "joint_lo", "joint_hi", "simbas", "flag"])?;
    for l in 0..b.grid.len() {
        w.write_record([
            format!("{:?}", b.grid[l]),
            format!("{:?}", b.estimate[l]),
            format!("{:?}", b.pointwise_lo[l]),
            format!("{:?}", b.pointwise_hi[l]),
            format!("{:?}", b.joint_lo[l]),
            format!("{:?}", b.joint_hi[l]),
            format!("{:?}", b.simbas[l]),
            (b.flags[l] as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_estimate_csv(path: &Path, a: &CurveAnalysis) -> Result<()> {
    let t = a.estimate.eval_grid.points();
    let (lo, hi) = a.band.joint_band_at(t)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["t", "estimate", "joint_lo", "joint_hi"])?;
    for l in 0..t.len() {
        w.write_record([
            format!("{:?}", t[l]),
            format!("{:?}", a.estimate.values[l]),
            format!("{:?}", lo[l]),
            format!("{:?}", hi[l]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<AnalysisOutput> {
    let start = Instant::now();
    let (cfg, ds) = resolve(args)?;
    let pipe = pipeline_config(&cfg)?;
    let method: CurveMethod = cfg.method.parse()?;
    let taus = cfg
        .taus
        .iter()
        .map(|&t| QuantileLevel::new(t))
        .collect::<fqr_core::Result<Vec<_>>>()?;
    let contrasts = cfg
        .contrasts
        .iter()
        .map(|w| Contrast::new(w.clone()))
        .collect::<fqr_core::Result<Vec<_>>>()?;
    ensure_dir(&args.out)?;

    let mut warnings = Vec::new();
    if let Some(w) = density_warning(&ds) {
        log::warn!("{w}");
        warnings.push(w);
    }
    let work = working_dataset(&ds, method, &pipe).context("presmoothing stage")?;

    let mut results = Vec::new();
    let mut analyses = Vec::new();
    let mut timings = Timings {
        threads: args.threads,
        total_seconds: 0.0,
        fit_seconds: Vec::new(),
        blocks: Vec::new(),
    };
    with_threads(args.threads, || -> Result<()> {
        for (qi, &tau) in taus.iter().enumerate() {
            let t0 = Instant::now();
            let fits = fit_stage(&work, tau, &pipe, 0)
                .with_context(|| format!("fit stage (tau = {})", tau.value()))?;
            timings.fit_seconds.push((tau.value(), t0.elapsed().as_secs_f64()));
            for (ci, contrast) in contrasts.iter().enumerate() {
                let t1 = Instant::now();
                let label = format!("tau = {}, contrast {ci}", tau.value());
                let cov = covariance_stage(&work, &fits, tau, contrast, &pipe)
                    .with_context(|| format!("covariance stage ({label})"))?;
                let band_seed = derive_seed(cfg.seed, ((qi as u64) << 16) | ci as u64);
                let a = estimate_stage(&work, &fits, cov, tau, contrast, method, &pipe, band_seed)
                    .with_context(|| format!("estimation stage ({label})"))?;
                let stem = format!("tau{}_c{ci}", tau_label(tau.value()));
                let curve_csv = format!("curve_{stem}.csv");
                let estimate_csv = format!("estimate_{stem}.csv");
                write_curve_csv(&args.out.join(&curve_csv), &a)?;
                write_estimate_csv(&args.out.join(&estimate_csv), &a)?;
                if cfg.dump_sigma {
                    write_matrix(&args.out.join(format!("sigma_{stem}.csv")), &a.covariance.sigma)?;
                }
                let b = &a.band;
                let duality_holds = b
                    .simbas
                    .iter()
                    .zip(&b.excludes_zero)
                    .all(|(&s, &x)| (s <= b.alpha) == x);
                for w in &a.warnings {
                    log::warn!("{label}: {w}");
                }
                results.push(ResultBlock {
                    tau: tau.value(),
                    contrast_index: ci,
                    contrast: contrast.weights().to_vec(),
                    method: method.label(),
                    curve_csv,
                    estimate_csv,
                    alpha: b.alpha,
                    z_alpha: b.z_alpha,
                    c_n_alpha: b.c_n_alpha,
                    mc_draws: b.mc_draws,
                    band_seed,
                    sigma_smoothed: a.covariance.smoothed,
                    psd_shift: a.covariance.psd_shift,
                    locations_excluding_zero: b.excludes_zero.iter().filter(|&&x| x).count(),
                    locations_flagged: b.flags.iter().filter(|&&x| x).count(),
                    min_simbas: b.simbas.iter().copied().fold(1.0, f64::min),
                    duality_holds,
                    gp: a.gp.as_ref().map(|g| GpSummary {
                        theta_sigma: g.hyper.theta_sigma,
                        theta_l: g.hyper.theta_l,
                        mmle_theta_sigma: g.mmle.theta_sigma,
                        mmle_theta_l: g.mmle.theta_l,
                        loglik: g.loglik,
                        adjustment: cfg.gp_adjustment.clone(),
                    }),
                    warnings: a.warnings.clone(),
                });
                timings.blocks.push(BlockTiming {
                    tau: tau.value(),
                    contrast_index: ci,
                    seconds: t1.elapsed().as_secs_f64(),
                });
                analyses.push(a);
            }
        }
        Ok(())
    })?;

    let summary = summarize(&ds);
    write_json(
        &args.out.join("manifest.json"),
        &Manifest {
            tool: "fqr",
            version: env!("CARGO_PKG_VERSION"),
            command: "analyze",
            generated_at: timestamp(),
            config: &cfg,
            dataset: &summary,
            warnings: &warnings,
            results: &results,
        },
    )?;
    timings.total_seconds = start.elapsed().as_secs_f64();
    write_json(&args.out.join("timings.json"), &timings)?;
    Ok(AnalysisOutput {
        out_dir: args.out.clone(),
        config: cfg,
        results,
        analyses,
        warnings,
    })
}
