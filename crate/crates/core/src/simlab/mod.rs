//! Simulation scenarios mimicking mass-spectrometry curves, their true
//! quantile coefficient functions, and replicate studies.

mod study;
mod truth;

pub use study::{metrics, run_study, ReplicateMetrics, ReplicateRecord, StudyConfig, StudyReport, SummaryRow};
pub use truth::{binary_truth_oracle, true_quantile_curve, TruthFunctions, ORACLE_DRAWS, ORACLE_SEED};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{FunctionalDataset, SamplingGrid};
use crate::error::{FqrError, Result};
use crate::rng::substream;

/// Lag-1 correlation of the latent Gaussian AR(1) whose t3 transform has
/// lag-1 correlation 0.5. Obtained by numerical quadrature of the bivariate
/// normal integral and root finding.
pub const T3_COPULA_RHO: f64 = 0.571940910805667;

pub const SCENARIO_NAMES: [&str; 3] = ["continuous", "binary", "binary-gaussian-peaks"];

pub fn normal_density(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Peak height distribution, sampled as a monotone transform of a standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum PeakLaw {
    Normal { mean: f64, sd: f64 },
    /// `shift + InverseGamma(shape 1, scale)`.
    InverseGamma { scale: f64, shift: f64 },
    /// `shift + scale * t_df`.
    ScaledT { df: f64, scale: f64, shift: f64 },
}

impl PeakLaw {
    /// Quantile at `Phi(z)`, computed from the tail nearer to `z` for accuracy.
    pub fn from_normal(&self, z: f64) -> f64 {
        match *self {
            PeakLaw::Normal { mean, sd } => mean + sd * z,
            PeakLaw::InverseGamma { scale, shift } => {
                // CDF exp(-scale / x), so x = scale / (-ln u).
                let std = Normal::standard();
                let neg_log_u = if z >= 0.0 {
                    -(-std.cdf(-z)).ln_1p()
                } else {
                    -std.cdf(z).ln()
                };
                shift + scale / neg_log_u
            }
            PeakLaw::ScaledT { df, scale, shift } => {
                shift + scale * t_from_normal(z, df)
            }
        }
    }
}

fn t_from_normal(z: f64, df: f64) -> f64 {
    let std = Normal::standard();
    let upper = std.cdf(-z.abs());
    let q = if df == 2.0 {
        // Closed form: F^{-1}(p) = (2p - 1) / sqrt(2 p (1 - p)).
        (1.0 - 2.0 * upper) / (2.0 * upper * (1.0 - upper)).sqrt()
    } else {
        -StudentsT::new(0.0, 1.0, df).expect("valid df").inverse_cdf(upper)
    };
    q.copysign(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "marginal", rename_all = "kebab-case")]
pub enum NoiseMarginal {
    Gaussian { sd: f64 },
    StudentT { df: f64 },
}

impl NoiseMarginal {
    pub fn from_normal(&self, z: f64) -> f64 {
        match *self {
            NoiseMarginal::Gaussian { sd } => sd * z,
            NoiseMarginal::StudentT { df } => t_from_normal(z, df),
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        match *self {
            NoiseMarginal::Gaussian { sd } => sd * Normal::standard().inverse_cdf(tau),
            NoiseMarginal::StudentT { df } => {
                StudentsT::new(0.0, 1.0, df).expect("valid df").inverse_cdf(tau)
            }
        }
    }
}

/// Stationary AR(1) noise: Gaussian AR(1) with lag-1 correlation `latent_rho`
/// pushed through the marginal transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    /// Target lag-1 correlation on the observed scale.
    pub rho: f64,
    pub latent_rho: f64,
    pub marginal: NoiseMarginal,
}

impl NoiseModel {
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let innov = (1.0 - self.latent_rho * self.latent_rho).sqrt();
        let mut z: f64 = rng.sample(StandardNormal);
        for (k, o) in out.iter_mut().enumerate() {
            if k > 0 {
                z = self.latent_rho * z + innov * rng.sample::<f64, _>(StandardNormal);
            }
            *o = self.marginal.from_normal(z);
        }
    }
}

/// Peak `c * phi(t | mu, sigma)` multiplying one continuous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientPeak {
    pub c: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Peak whose height law depends on the group `x = -1` or `x = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupPeak {
    pub mu: f64,
    pub sigma: f64,
    pub minus: PeakLaw,
    pub plus: PeakLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimScenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub n: usize,
    pub t_len: usize,
    pub domain: (f64, f64),
    pub noise: NoiseModel,
    /// Continuous case: one peak per covariate, in design-column order after the intercept.
    pub coefficient_peaks: Vec<CoefficientPeak>,
    /// Binary case: peaks summed into every curve.
    pub group_peaks: Vec<GroupPeak>,
}

impl SimScenario {
    pub fn continuous() -> Self {
        Self {
            name: "continuous".into(),
            kind: ScenarioKind::Continuous,
            n: 400,
            t_len: 128,
            domain: (0.0, 5.10),
            noise: NoiseModel {
                rho: 0.5,
                latent_rho: T3_COPULA_RHO,
                marginal: NoiseMarginal::StudentT { df: 3.0 },
            },
            coefficient_peaks: vec![
                CoefficientPeak { c: 0.75, mu: 1.0, sigma: 0.2 },
                CoefficientPeak { c: 1.0, mu: 3.0, sigma: 0.4 },
            ],
            group_peaks: Vec::new(),
        }
    }

    pub fn binary() -> Self {
        let normal = |mean, sd| PeakLaw::Normal { mean, sd };
        let peak = |mu, minus, plus| GroupPeak { mu, sigma: 0.25, minus, plus };
        Self {
            name: "binary".into(),
            kind: ScenarioKind::Binary,
            n: 500,
            t_len: 256,
            domain: (0.0, 8.0),
            noise: NoiseModel {
                rho: 0.8,
                latent_rho: 0.8,
                marginal: NoiseMarginal::Gaussian { sd: 4.0 },
            },
            coefficient_peaks: Vec::new(),
            group_peaks: vec![
                peak(1.0, normal(18.5, 1.0), normal(20.0, 1.0)),
                peak(3.0, PeakLaw::InverseGamma { scale: 0.4, shift: 20.0 }, normal(20.25, 0.5)),
                peak(5.0, normal(20.0, 2.0), normal(20.0, 2.0)),
                peak(
                    7.0,
                    normal(20.0, 1.0),
                    PeakLaw::ScaledT { df: 2.0, scale: 2.5, shift: 20.0 },
                ),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "continuous" => Ok(Self::continuous()),
            "binary" => Ok(Self::binary()),
            "binary-gaussian-peaks" => {
                let mut s = Self::binary().drop_peaks(&[2, 4])?;
                s.name = name.into();
                Ok(s)
            }
            _ => Err(FqrError::UnknownScenario {
                name: name.into(),
                valid: SCENARIO_NAMES.join(", "),
            }),
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_t_len(mut self, t_len: usize) -> Self {
        self.t_len = t_len;
        self
    }

    /// Removes binary-case peaks by 1-based index.
    pub fn drop_peaks(mut self, peaks: &[usize]) -> Result<Self> {
        if self.kind != ScenarioKind::Binary {
            return Err(FqrError::InvalidArgument("only binary scenarios have removable peaks".into()));
        }
        if let Some(&k) = peaks.iter().find(|&&k| k == 0 || k > self.group_peaks.len()) {
            return Err(FqrError::InvalidArgument(format!("no peak {k}")));
        }
        self.group_peaks = self
            .group_peaks
            .iter()
            .enumerate()
            .filter(|(i, _)| !peaks.contains(&(i + 1)))
            .map(|(_, p)| *p)
            .collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise.rho.abs() < 1.0 && self.noise.latent_rho.abs() < 1.0) {
            return Err(FqrError::InvalidArgument("AR(1) correlation must lie in (-1, 1)".into()));
        }
        if self.t_len < 2 {
            return Err(FqrError::GridTooShort(self.t_len));
        }
        let d = self.design_dim();
        if self.n <= d {
            return Err(FqrError::InvalidArgument(format!("n = {} is too small for {d} design columns", self.n)));
        }
        let sigmas = self
            .coefficient_peaks
            .iter()
            .map(|p| p.sigma)
            .chain(self.group_peaks.iter().map(|p| p.sigma));
        if sigmas.into_iter().any(|s| !(s > 0.0)) {
            return Err(FqrError::InvalidArgument("peak widths must be positive".into()));
        }
        Ok(())
    }

    pub fn design_dim(&self) -> usize {
        match self.kind {
            ScenarioKind::Continuous => 1 + self.coefficient_peaks.len(),
            ScenarioKind::Binary => 2,
        }
    }

    pub fn grid(&self) -> Result<SamplingGrid> {
        SamplingGrid::uniform(self.domain.0, self.domain.1, self.t_len)
    }

    /// Design columns whose coefficient functions are reported in studies.
    pub fn reported_coefficients(&self) -> Vec<usize> {
        match self.kind {
            ScenarioKind::Continuous => (1..=self.coefficient_peaks.len()).collect(),
            ScenarioKind::Binary => vec![1],
        }
    }

    /// One simulated dataset; the draw order is fixed so `seed` determines it fully.
    pub fn generate(&self, seed: u64) -> Result<FunctionalDataset> {
        self.validate()?;
        let grid = self.grid()?;
        let t = grid.points();
        let (n, t_len, d) = (self.n, self.t_len, self.design_dim());
        let mut rng = substream(seed, 0);
        let mut design = DMatrix::zeros(n, d);
        let mut y = DMatrix::zeros(n, t_len);
        let mut noise = vec![0.0; t_len];
        let coef_profiles: Vec<Vec<f64>> = self
            .coefficient_peaks
            .iter()
            .map(|p| t.iter().map(|&s| p.c * normal_density(s, p.mu, p.sigma)).collect())
            .collect();
        let group_profiles: Vec<Vec<f64>> = self
            .group_peaks
            .iter()
            .map(|p| t.iter().map(|&s| normal_density(s, p.mu, p.sigma)).collect())
            .collect();
        for i in 0..n {
            design[(i, 0)] = 1.0;
            match self.kind {
                ScenarioKind::Continuous => {
                    for k in 1..d {
                        design[(i, k)] = rng.sample(StandardNormal);
                    }
                    self.noise.sample_path(&mut rng, &mut noise);
                    for l in 0..t_len {
                        let signal: f64 = coef_profiles
                            .iter()
                            .enumerate()
                            .map(|(k, prof)| design[(i, k + 1)] * prof[l])
                            .sum();
                        y[(i, l)] = signal + noise[l];
                    }
                }
                ScenarioKind::Binary => {
                    let plus = rng.random::<bool>();
                    design[(i, 1)] = if plus { 1.0 } else { -1.0 };
                    let heights: Vec<f64> = self
                        .group_peaks
                        .iter()
                        .map(|p| {
                            let law = if plus { p.plus } else { p.minus };
                            law.from_normal(rng.sample(StandardNormal))
                        })
                        .collect();
                    self.noise.sample_path(&mut rng, &mut noise);
                    for l in 0..t_len {
                        let signal: f64 = heights
                            .iter()
                            .zip(&group_profiles)
                            .map(|(c, prof)| c * prof[l])
                            .sum();
                        y[(i, l)] = signal + noise[l];
                    }
                }
            }
        }
        FunctionalDataset::new(y, design, grid)
    }
}

pub fn gen_continuous(seed: u64) -> Result<(FunctionalDataset, TruthFunctions)> {
    let s = SimScenario::continuous();
    Ok((s.generate(seed)?, TruthFunctions::new(s)))
}

pub fn gen_binary(seed: u64) -> Result<(FunctionalDataset, TruthFunctions)> {
    let s = SimScenario::binary();
    Ok((s.generate(seed)?, TruthFunctions::new(s)))
}

impl SimScenario {
    pub fn truth_curve(&self, tau: f64, coefficient: usize, t: &[f64]) -> Result<Vec<f64>> {
        true_quantile_curve(self, tau, coefficient, t)
    }
}
