//! Orchestration behind the `fqr` binary: the `analyze` pipeline over CSV
//! inputs and the `simulate` replicate studies.

mod analyze;
mod output;
mod simulate;

pub use analyze::{run_analyze, AnalyzeArgs, AnalyzeConfig, AnalysisOutput, ResultBlock};
pub use simulate::{run_simulate, SimulateArgs, SimulateConfig};

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use fqr_core::bayes_gp::LogTAdjustment;
use fqr_core::coupling::DiagonalMode;

#[derive(Debug, Parser)]
#[command(name = "fqr", version, about = "Function-on-scalar quantile regression with simultaneous bands")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit curves and bands for a dataset given as three CSV files.
    Analyze(AnalyzeArgs),
    /// Run a replicate study on a simulated scenario.
    Simulate(SimulateArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => {
            let out = run_analyze(&args)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} result blocks to {}", out.results.len(), out.out_dir.display());
        }
        Command::Simulate(args) => {
            let dir = run_simulate(&args)?;
            println!("wrote study report to {}", dir.display());
        }
    }
    Ok(())
}

pub(crate) fn parse_diagonal_mode(s: &str) -> Result<DiagonalMode> {
    Ok(match s {
        "analytic" => DiagonalMode::Analytic,
        "empirical" => DiagonalMode::Empirical,
        _ => bail!("unknown diagonal mode {s:?}; expected analytic or empirical"),
    })
}

pub(crate) fn parse_adjustment(s: &str) -> Result<LogTAdjustment> {
    Ok(match s {
        "divide" => LogTAdjustment::Divide,
        "multiply" => LogTAdjustment::Multiply,
        "none" => LogTAdjustment::None,
        _ => bail!("unknown log(T) adjustment {s:?}; expected divide, multiply or none"),
    })
}
