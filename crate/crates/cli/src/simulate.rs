use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use fqr_core::estimators::CurveMethod;
use fqr_core::pipeline::PipelineConfig;
use fqr_core::simlab::{run_study, SimScenario, StudyConfig};

use crate::output::{ensure_dir, timestamp, write_json};
use crate::{parse_adjustment, parse_diagonal_mode};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// continuous, binary or binary-gaussian-peaks.
    #[arg(long, default_value = "continuous")]
    pub scenario: String,
    /// Override the number of curves.
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the number of grid locations.
    #[arg(long = "t-len")]
    pub t_len: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long = "tau", default_values_t = [0.5, 0.8, 0.9])]
    pub taus: Vec<f64>,
    /// Repeat for several; defaults to li, bayes-gp and presmooth-li.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub mc_draws: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub wavelet_smooth: bool,
    #[arg(long, default_value = "analytic")]
    pub diagonal_mode: String,
    #[arg(long, default_value = "divide")]
    pub gp_adjustment: String,
    #[arg(long, required_unless_present = "replay")]
    pub seed: Option<u64>,
    #[arg(long, env = "FQR_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = "fqr-sim")]
    pub out: PathBuf,
    /// Re-run the configuration embedded in an earlier manifest.json.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub scenario: String,
    pub n: usize,
    pub t_len: usize,
    pub replicates: usize,
    pub taus: Vec<f64>,
    pub methods: Vec<String>,
    pub alpha: f64,
    pub mc_draws: usize,
    pub wavelet_smooth: bool,
    pub diagonal_mode: String,
    pub gp_adjustment: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    generated_at: u64,
    config: &'a SimulateConfig,
    scenario: &'a SimScenario,
    summary_csv: &'static str,
    replicates_csv: &'static str,
    failed_replicates: usize,
    failures: &'a [(usize, String)],
}

#[derive(Serialize)]
struct Timings {
    threads: usize,
    runtime_seconds: f64,
}

fn resolve(args: &SimulateArgs) -> Result<(SimulateConfig, SimScenario)> {
    let cfg = if let Some(path) = &args.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        serde_json::from_value(v.get("config").cloned().ok_or_else(|| anyhow!("manifest has no config"))?)?
    } else {
        let base = SimScenario::by_name(&args.scenario)?;
        let methods = if args.methods.is_empty() {
            vec!["li".into(), "bayes-gp".into(), "presmooth-li".into()]
        } else {
            args.methods.clone()
        };
        SimulateConfig {
            scenario: args.scenario.clone(),
            n: args.n.unwrap_or(base.n),
            t_len: args.t_len.unwrap_or(base.t_len),
            replicates: args.replicates,
            taus: args.taus.clone(),
            methods,
            alpha: args.alpha,
            mc_draws: args.mc_draws,
            wavelet_smooth: args.wavelet_smooth,
            diagonal_mode: args.diagonal_mode.clone(),
            gp_adjustment: args.gp_adjustment.clone(),
            seed: args.seed.ok_or_else(|| anyhow!("--seed is required"))?,
        }
    };
    let scenario = SimScenario::by_name(&cfg.scenario)?.with_n(cfg.n).with_t_len(cfg.t_len);
    Ok((cfg, scenario))
}

/// Runs the study and writes `study_summary.csv`, `study_replicates.csv`,
/// `manifest.json` and `timings.json` into the output directory.
pub fn run_simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let (cfg, scenario) = resolve(args)?;
    let methods = cfg
        .methods
        .iter()
        .map(|m| m.parse::<CurveMethod>())
        .collect::<fqr_core::Result<Vec<_>>>()?;
    let mut pipeline = PipelineConfig {
        alpha: cfg.alpha,
        mc_draws: cfg.mc_draws,
        wavelet_smooth: cfg.wavelet_smooth,
        diagonal_mode: parse_diagonal_mode(&cfg.diagonal_mode)?,
        ..PipelineConfig::default()
    };
    pipeline.gp_search.adjustment = parse_adjustment(&cfg.gp_adjustment)?;
    let study = StudyConfig {
        scenario: scenario.clone(),
        methods,
        taus: cfg.taus.clone(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        parallelism: args.threads,
        pipeline,
        identical_replicates: false,
    };
    let report = run_study(&study).context("simulation study")?;
    ensure_dir(&args.out)?;
    report.write_summary_csv(&args.out.join("study_summary.csv"))?;
    report.write_records_csv(&args.out.join("study_replicates.csv"))?;
    write_json(
        &args.out.join("manifest.json"),
        &Manifest {
            tool: "fqr",
            version: env!("CARGO_PKG_VERSION"),
            command: "simulate",
            generated_at: timestamp(),
            config: &cfg,
            scenario: &scenario,
            summary_csv: "study_summary.csv",
            replicates_csv: "study_replicates.csv",
            failed_replicates: report.failures.len(),
            failures: &report.failures,
        },
    )?;
    write_json(
        &args.out.join("timings.json"),
        &Timings {
            threads: args.threads,
            runtime_seconds: report.runtime_secs,
        },
    )?;
    for (r, e) in &report.failures {
        log::warn!("replicate {r} failed: {e}");
    }
    Ok(args.out.clone())
}
