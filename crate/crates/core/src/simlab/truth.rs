use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use rayon::prelude::*;

use super::{normal_density, ScenarioKind, SimScenario};
use crate::error::{FqrError, Result};
use crate::rng::substream;

pub const ORACLE_DRAWS: usize = 1_000_000;
pub const ORACLE_SEED: u64 = 0x0AC1_E5EE_D000_0001;

/// `t, beta_1 at tau = 0.5, 0.8, 0.9` for the default binary scenario on its
/// sampling grid refined by 4, from `binary_truth_oracle` at `ORACLE_SEED`.
const STORED_TABLE: &str = include_str!("../../data/binary_truth.csv");
const TABLE_TAUS: [f64; 3] = [0.5, 0.8, 0.9];

/// True quantile coefficient functions of a scenario.
#[derive(Debug, Clone)]
pub struct TruthFunctions {
    pub scenario: SimScenario,
}

impl TruthFunctions {
    pub fn new(scenario: SimScenario) -> Self {
        Self { scenario }
    }

    pub fn curve(&self, tau: f64, coefficient: usize, t: &[f64]) -> Result<Vec<f64>> {
        true_quantile_curve(&self.scenario, tau, coefficient, t)
    }
}

/// Per-group tau-quantiles of `Y(t)` in the binary case, as `[(x = -1), (x = +1)]`
/// for each requested tau.
///
/// Both groups reuse the same normal draws: peak heights are monotone
/// transforms of shared normals and the noise draw is shared, which keeps the
/// group difference nearly free of Monte Carlo error. Only marginal quantiles
/// at each `t` matter, so one noise draw per replicate serves every location.
/// Each input normal is Latin-hypercube stratified, which removes most of the
/// sampling error of the additive noise term.
pub fn binary_truth_oracle(
    scenario: &SimScenario,
    taus: &[f64],
    t: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<[Vec<f64>; 2]>> {
    if scenario.kind != ScenarioKind::Binary {
        return Err(FqrError::InvalidArgument("oracle applies to binary scenarios".into()));
    }
    if draws == 0 || taus.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(FqrError::InvalidArgument("need draws > 0 and taus in (0, 1)".into()));
    }
    let peaks = &scenario.group_peaks;
    let k = peaks.len();
    let mut rng = substream(seed, 0);
    let mut heights = [vec![0.0; draws * k], vec![0.0; draws * k]];
    let mut noise = vec![0.0; draws];
    for p in 0..=k {
        let z = latin_hypercube_normals(&mut rng, draws);
        for (j, &zj) in z.iter().enumerate() {
            if p < k {
                heights[0][j * k + p] = peaks[p].minus.from_normal(zj);
                heights[1][j * k + p] = peaks[p].plus.from_normal(zj);
            } else {
                noise[j] = scenario.noise.marginal.from_normal(zj);
            }
        }
    }
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let ranks: Vec<usize> = taus
        .iter()
        .map(|&p| ((p * draws as f64).ceil() as usize).clamp(1, draws) - 1)
        .collect();

    let per_t: Vec<[Vec<f64>; 2]> = t
        .par_iter()
        .map(|&s| {
            let prof: Vec<f64> = peaks.iter().map(|p| normal_density(s, p.mu, p.sigma)).collect();
            let mut buf = vec![0.0; draws];
            let mut out = [vec![0.0; taus.len()], vec![0.0; taus.len()]];
            for g in 0..2 {
                for j in 0..draws {
                    let h = &heights[g][j * k..(j + 1) * k];
                    buf[j] = h.iter().zip(&prof).map(|(a, b)| a * b).sum::<f64>() + noise[j];
                }
                let mut lo = 0;
                for &q in &order {
                    let r = ranks[q];
                    if r >= lo {
                        let (_, v, _) = buf[lo..].select_nth_unstable_by(r - lo, f64::total_cmp);
                        out[g][q] = *v;
                        lo = r;
                    } else {
                        out[g][q] = buf[r];
                    }
                }
            }
            out
        })
        .collect();

    Ok((0..taus.len())
        .map(|q| {
            [
                per_t.iter().map(|o| o[0][q]).collect(),
                per_t.iter().map(|o| o[1][q]).collect(),
            ]
        })
        .collect())
}

/// One stratified standard normal per stratum `[i/N, (i+1)/N)`, in random order.
fn latin_hypercube_normals<R: Rng + ?Sized>(rng: &mut R, draws: usize) -> Vec<f64> {
    let std = Normal::standard();
    let mut strata: Vec<usize> = (0..draws).collect();
    strata.shuffle(rng);
    strata
        .into_iter()
        .map(|i| std.inverse_cdf((i as f64 + rng.random::<f64>()) / draws as f64))
        .collect()
}

fn stored_table() -> (Vec<f64>, Vec<[f64; 3]>) {
    let mut reader = csv::Reader::from_reader(STORED_TABLE.as_bytes());
    let mut t = Vec::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.expect("stored truth table is valid CSV");
        let v: Vec<f64> = rec.iter().map(|c| c.parse().expect("numeric cell")).collect();
        t.push(v[0]);
        rows.push([v[1], v[2], v[3]]);
    }
    (t, rows)
}

fn from_table(scenario: &SimScenario, tau: f64, t: &[f64]) -> Option<Vec<f64>> {
    let reference = SimScenario::binary();
    if scenario.group_peaks != reference.group_peaks
        || scenario.noise != reference.noise
        || scenario.domain != reference.domain
    {
        return None;
    }
    let col = TABLE_TAUS.iter().position(|&p| (p - tau).abs() < 1e-12)?;
    let (grid, rows) = stored_table();
    t.iter()
        .map(|&s| {
            let i = grid.partition_point(|&g| g < s - 1e-9);
            (i < grid.len() && (grid[i] - s).abs() < 1e-9).then(|| rows[i][col])
        })
        .collect()
}

/// `beta_coefficient^tau(t)` for a scenario.
///
/// Continuous case: closed form. Binary case: coefficient 1 is half the
/// difference of the group quantiles and coefficient 0 their average, read
/// from the stored table when it covers the request and otherwise from
/// `binary_truth_oracle` with `ORACLE_DRAWS` draws.
pub fn true_quantile_curve(
    scenario: &SimScenario,
    tau: f64,
    coefficient: usize,
    t: &[f64],
) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FqrError::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    if coefficient >= scenario.design_dim() {
        return Err(FqrError::InvalidArgument(format!(
            "scenario has {} coefficients, asked for {coefficient}",
            scenario.design_dim()
        )));
    }
    match scenario.kind {
        ScenarioKind::Continuous => Ok(if coefficient == 0 {
            vec![scenario.noise.marginal.quantile(tau); t.len()]
        } else {
            let p = scenario.coefficient_peaks[coefficient - 1];
            t.iter().map(|&s| p.c * normal_density(s, p.mu, p.sigma)).collect()
        }),
        ScenarioKind::Binary => {
            if coefficient == 1 {
                if let Some(v) = from_table(scenario, tau, t) {
                    return Ok(v);
                }
            }
            let q = binary_truth_oracle(scenario, &[tau], t, ORACLE_DRAWS, ORACLE_SEED)?;
            let [minus, plus] = &q[0];
            Ok(minus
                .iter()
                .zip(plus)
                .map(|(a, b)| if coefficient == 1 { (b - a) / 2.0 } else { (a + b) / 2.0 })
                .collect())
        }
    }
}

