use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::SimScenario;
use crate::dataset::{Contrast, FunctionalDataset};
use crate::error::{FqrError, Result};
use crate::estimators::{CurveEstimate, CurveMethod};
use crate::inference::BandResult;
use crate::parallel::with_threads;
use crate::pipeline::{covariance_stage, estimate_stage, fit_stage, working_dataset, PipelineConfig};
use crate::qr::QuantileLevel;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateMetrics {
    /// Mean squared error over the evaluation grid times the domain length.
    pub imse: f64,
    /// Sum of squared errors over the sampling grid.
    pub imse_grid_sum: f64,
    pub pointwise_coverage: f64,
    /// 1 when the truth lies inside the joint band at every sampling location.
    pub joint_coverage: f64,
    /// Average full width `hi - lo` over the sampling grid.
    pub pointwise_width: f64,
    pub joint_width: f64,
}

/// Metrics of one estimate against the truth on the evaluation grid
/// (`truth_eval`) and the sampling grid (`truth_nodes`).
pub fn metrics(
    estimate: &CurveEstimate,
    band: &BandResult,
    truth_eval: &[f64],
    truth_nodes: &[f64],
) -> Result<ReplicateMetrics> {
    if truth_eval.len() != estimate.values.len() || truth_nodes.len() != band.estimate.len() {
        return Err(FqrError::GridMismatch(format!(
            "truth has {} / {} points, estimate {} and band {}",
            truth_eval.len(),
            truth_nodes.len(),
            estimate.values.len(),
            band.estimate.len()
        )));
    }
    let m = truth_eval.len() as f64;
    let t = truth_nodes.len() as f64;
    let mse = estimate
        .values
        .iter()
        .zip(truth_eval)
        .map(|(e, v)| (e - v).powi(2))
        .sum::<f64>()
        / m;
    let grid_sum = band
        .estimate
        .iter()
        .zip(truth_nodes)
        .map(|(e, v)| (e - v).powi(2))
        .sum::<f64>();
    let inside = |lo: &[f64], hi: &[f64], l: usize| lo[l] <= truth_nodes[l] && truth_nodes[l] <= hi[l];
    let pw_hits = (0..truth_nodes.len())
        .filter(|&l| inside(&band.pointwise_lo, &band.pointwise_hi, l))
        .count();
    let joint = (0..truth_nodes.len()).all(|l| inside(&band.joint_lo, &band.joint_hi, l));
    let width = |lo: &[f64], hi: &[f64]| hi.iter().zip(lo).map(|(h, l)| h - l).sum::<f64>() / t;
    Ok(ReplicateMetrics {
        imse: mse * estimate.eval_grid.domain_length(),
        imse_grid_sum: grid_sum,
        pointwise_coverage: pw_hits as f64 / t,
        joint_coverage: if joint { 1.0 } else { 0.0 },
        pointwise_width: width(&band.pointwise_lo, &band.pointwise_hi),
        joint_width: width(&band.joint_lo, &band.joint_hi),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub scenario: SimScenario,
    pub methods: Vec<CurveMethod>,
    pub taus: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub pipeline: PipelineConfig,
    /// Every replicate reuses `seed` itself instead of a derived seed.
    pub identical_replicates: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub tau: f64,
    pub coefficient: usize,
    #[serde(flatten)]
    pub metrics: ReplicateMetrics,
}

/// Mean and standard error of each metric for one (tau, coefficient, method).
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub n: usize,
    pub t_len: usize,
    pub tau: f64,
    pub coefficient: usize,
    pub method: String,
    pub replicates: usize,
    pub imse: f64,
    pub imse_se: f64,
    pub imse_grid_sum: f64,
    pub imse_grid_sum_se: f64,
    pub pointwise_coverage: f64,
    pub pointwise_coverage_se: f64,
    pub pointwise_width: f64,
    pub pointwise_width_se: f64,
    pub joint_coverage: f64,
    pub joint_coverage_se: f64,
    pub joint_width: f64,
    pub joint_width_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicateRecord>,
    /// `(replicate, message)` for replicates that failed.
    pub failures: Vec<(usize, String)>,
    pub runtime_secs: f64,
}

impl StudyReport {
    pub fn row(&self, tau: f64, coefficient: usize, method: CurveMethod) -> Option<&SummaryRow> {
        let label = method.label();
        self.rows
            .iter()
            .find(|r| (r.tau - tau).abs() < 1e-12 && r.coefficient == coefficient && r.method == label)
    }

    pub fn write_summary_csv(&self, path: &std::path::Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    pub fn write_records_csv(&self, path: &std::path::Path) -> Result<()> {
        let flat: Vec<_> = self
            .records
            .iter()
            .map(|r| {
                let m = &r.metrics;
                FlatRecord {
                    replicate: r.replicate,
                    seed: r.seed,
                    method: &r.method,
                    tau: r.tau,
                    coefficient: r.coefficient,
                    imse: m.imse,
                    imse_grid_sum: m.imse_grid_sum,
                    pointwise_coverage: m.pointwise_coverage,
                    joint_coverage: m.joint_coverage,
                    pointwise_width: m.pointwise_width,
                    joint_width: m.joint_width,
                }
            })
            .collect();
        write_rows(path, &flat)
    }
}

// The csv writer cannot serialize flattened structs.
#[derive(Serialize)]
struct FlatRecord<'a> {
    replicate: usize,
    seed: u64,
    method: &'a str,
    tau: f64,
    coefficient: usize,
    imse: f64,
    imse_grid_sum: f64,
    pointwise_coverage: f64,
    joint_coverage: f64,
    pointwise_width: f64,
    joint_width: f64,
}

fn write_rows<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| FqrError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| FqrError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Truth {
    eval: Vec<f64>,
    nodes: Vec<f64>,
}

fn replicate(
    cfg: &StudyConfig,
    seed: u64,
    truths: &[Vec<Truth>],
) -> Result<Vec<(f64, usize, CurveMethod, ReplicateMetrics)>> {
    let pipe = cfg.pipeline.seeded(seed);
    let raw = cfg.scenario.generate(seed)?;
    let coefs = cfg.scenario.reported_coefficients();
    let d = cfg.scenario.design_dim();
    let needs_raw = cfg.methods.iter().any(|m| *m != CurveMethod::PresmoothLi);
    let smoothed = if cfg.methods.contains(&CurveMethod::PresmoothLi) {
        Some(working_dataset(&raw, CurveMethod::PresmoothLi, &pipe)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for (qi, &tau) in cfg.taus.iter().enumerate() {
        let level = QuantileLevel::new(tau)?;
        let mut run = |ds: &FunctionalDataset, methods: &[CurveMethod]| -> Result<()> {
            let fits = fit_stage(ds, level, &pipe, 0)?;
            for (ci, &coef) in coefs.iter().enumerate() {
                let contrast = Contrast::unit(d, coef)?;
                let cov = covariance_stage(ds, &fits, level, &contrast, &pipe)?;
                for &m in methods {
                    let band_seed = derive_seed(seed, ((qi as u64) << 32) | ((ci as u64) << 16) | 1);
                    let a = estimate_stage(ds, &fits, cov.clone(), level, &contrast, m, &pipe, band_seed)?;
                    let truth = &truths[qi][ci];
                    out.push((tau, coef, m, metrics(&a.estimate, &a.band, &truth.eval, &truth.nodes)?));
                }
            }
            Ok(())
        };
        if needs_raw {
            let methods: Vec<CurveMethod> =
                cfg.methods.iter().copied().filter(|m| *m != CurveMethod::PresmoothLi).collect();
            run(&raw, &methods)?;
        }
        if let Some(ds) = &smoothed {
            run(ds, &[CurveMethod::PresmoothLi])?;
        }
    }
    Ok(out)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs `replicates` simulated datasets through every method and quantile level.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.replicates < 2 {
        return Err(FqrError::InvalidArgument("a study needs at least 2 replicates".into()));
    }
    if cfg.methods.is_empty() || cfg.taus.is_empty() {
        return Err(FqrError::InvalidArgument("need at least one method and one tau".into()));
    }
    cfg.scenario.validate()?;
    cfg.pipeline.validate()?;
    let start = Instant::now();
    let grid = cfg.scenario.grid()?;
    let eval = grid.refine(cfg.pipeline.eval_refine);
    let coefs = cfg.scenario.reported_coefficients();
    let mut truths = Vec::new();
    for &tau in &cfg.taus {
        let mut per = Vec::new();
        for &c in &coefs {
            per.push(Truth {
                eval: cfg.scenario.truth_curve(tau, c, eval.points())?,
                nodes: cfg.scenario.truth_curve(tau, c, grid.points())?,
            });
        }
        truths.push(per);
    }

    let seeds: Vec<u64> = (0..cfg.replicates)
        .map(|r| if cfg.identical_replicates { cfg.seed } else { derive_seed(cfg.seed, r as u64) })
        .collect();
    let results: Vec<Result<_>> = with_threads(cfg.parallelism, || {
        seeds.par_iter().map(|&s| replicate(cfg, s, &truths)).collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(list) => records.extend(list.into_iter().map(|(tau, coefficient, m, metrics)| {
                ReplicateRecord {
                    replicate: r,
                    seed: seeds[r],
                    method: m.label(),
                    tau,
                    coefficient,
                    metrics,
                }
            })),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }

    let mut rows = Vec::new();
    for &tau in &cfg.taus {
        for &c in &coefs {
            for m in &cfg.methods {
                let label = m.label();
                let sel: Vec<&ReplicateMetrics> = records
                    .iter()
                    .filter(|r| r.tau == tau && r.coefficient == c && r.method == label)
                    .map(|r| &r.metrics)
                    .collect();
                let col = |f: fn(&ReplicateMetrics) -> f64| {
                    mean_se(&sel.iter().map(|m| f(m)).collect::<Vec<_>>())
                };
                let imse = col(|m| m.imse);
                let gs = col(|m| m.imse_grid_sum);
                let pc = col(|m| m.pointwise_coverage);
                let pw = col(|m| m.pointwise_width);
                let jc = col(|m| m.joint_coverage);
                let jw = col(|m| m.joint_width);
                rows.push(SummaryRow {
                    scenario: cfg.scenario.name.clone(),
                    n: cfg.scenario.n,
                    t_len: cfg.scenario.t_len,
                    tau,
                    coefficient: c,
                    method: label,
                    replicates: sel.len(),
                    imse: imse.0,
                    imse_se: imse.1,
                    imse_grid_sum: gs.0,
                    imse_grid_sum_se: gs.1,
                    pointwise_coverage: pc.0,
                    pointwise_coverage_se: pc.1,
                    pointwise_width: pw.0,
                    pointwise_width_se: pw.1,
                    joint_coverage: jc.0,
                    joint_coverage_se: jc.1,
                    joint_width: jw.0,
                    joint_width_se: jw.1,
                });
            }
        }
    }
    Ok(StudyReport {
        rows,
        records,
        failures,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
