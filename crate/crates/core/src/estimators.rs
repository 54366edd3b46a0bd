//! Whole-domain curve estimates built from the pointwise contrast estimates.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Contrast, FunctionalDataset, SamplingGrid};
use crate::error::{FqrError, Result};
use crate::qr::{PointwiseFit, QuantileLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMethod {
    Li,
    Spline(usize),
    PresmoothLi,
    BayesGp,
}

impl CurveMethod {
    pub fn label(&self) -> String {
        match self {
            CurveMethod::Li => "li".into(),
            CurveMethod::Spline(r) => format!("spline{r}"),
            CurveMethod::PresmoothLi => "presmooth-li".into(),
            CurveMethod::BayesGp => "bayes-gp".into(),
        }
    }
}

impl std::str::FromStr for CurveMethod {
    type Err = FqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "li" => Ok(CurveMethod::Li),
            "spline2" => Ok(CurveMethod::Spline(2)),
            "presmooth-li" => Ok(CurveMethod::PresmoothLi),
            "bayes-gp" => Ok(CurveMethod::BayesGp),
            _ => Err(FqrError::InvalidArgument(format!(
                "unknown method {s:?}; expected one of li, spline2, presmooth-li, bayes-gp"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveEstimate {
    pub method: CurveMethod,
    pub eval_grid: SamplingGrid,
    pub values: Vec<f64>,
    pub tau: QuantileLevel,
    pub contrast: Contrast,
}

/// `mu_hat(t_l) = a' beta_hat(t_l)` at every location.
pub fn extract_contrast(fits: &[PointwiseFit], contrast: &Contrast) -> Vec<f64> {
    fits.iter().map(|f| contrast.apply(&f.beta_hat)).collect()
}

fn check_values(grid: &SamplingGrid, values: &[f64]) -> Result<()> {
    if grid.len() != values.len() {
        return Err(FqrError::DimensionMismatch(format!(
            "{} values for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Index `l` with `t in [t_l, t_{l+1}]`.
fn bracket(points: &[f64], t: f64) -> usize {
    let idx = points.partition_point(|&p| p <= t);
    idx.saturating_sub(1).min(points.len() - 2)
}

fn check_query(grid: &SamplingGrid, query: &[f64]) -> Result<()> {
    for &q in query {
        if !grid.contains(q) {
            return Err(FqrError::OutOfDomain {
                value: q,
                lo: grid.first(),
                hi: grid.last(),
            });
        }
    }
    Ok(())
}

/// Piecewise-linear interpolation through `(t_l, values_l)`.
pub fn linear_interpolate(grid: &SamplingGrid, values: &[f64], query: &[f64]) -> Result<Vec<f64>> {
    check_values(grid, values)?;
    check_query(grid, query)?;
    let p = grid.points();
    Ok(query
        .iter()
        .map(|&t| {
            let l = bracket(p, t);
            let h = p[l + 1] - p[l];
            let w = (p[l + 1] - t) / h;
            if w == 1.0 {
                values[l]
            } else if w == 0.0 {
                values[l + 1]
            } else {
                w * values[l] + (1.0 - w) * values[l + 1]
            }
        })
        .collect())
}

/// Second derivatives of the natural cubic interpolating spline.
fn natural_second_derivatives(p: &[f64], y: &[f64]) -> Vec<f64> {
    let t = p.len();
    let mut m = vec![0.0; t];
    if t < 3 {
        return m;
    }
    let k = t - 2;
    // Thomas algorithm on the interior system.
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        let h0 = p[i + 1] - p[i];
        let h1 = p[i + 2] - p[i + 1];
        diag[i] = (h0 + h1) / 3.0;
        upper[i] = h1 / 6.0;
        rhs[i] = (y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0;
    }
    for i in 1..k {
        let lower = (p[i + 1] - p[i]) / 6.0;
        let f = lower / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

/// Minimizer of `int (g^(r))^2` among interpolants, for `r` in `{1, 2}`:
/// `r = 1` is the piecewise-linear interpolant, `r = 2` the natural cubic spline.
pub fn spline_interpolate(
    grid: &SamplingGrid,
    values: &[f64],
    r: usize,
    query: &[f64],
) -> Result<Vec<f64>> {
    match r {
        1 => linear_interpolate(grid, values, query),
        2 => {
            check_values(grid, values)?;
            check_query(grid, query)?;
            let p = grid.points();
            let m = natural_second_derivatives(p, values);
            Ok(query
                .iter()
                .map(|&t| {
                    let l = bracket(p, t);
                    let h = p[l + 1] - p[l];
                    let a = p[l + 1] - t;
                    let b = t - p[l];
                    m[l] * a.powi(3) / (6.0 * h)
                        + m[l + 1] * b.powi(3) / (6.0 * h)
                        + (values[l] / h - m[l] * h / 6.0) * a
                        + (values[l + 1] / h - m[l + 1] * h / 6.0) * b
                })
                .collect())
        }
        other => Err(FqrError::UnsupportedOrder(other)),
    }
}

/// Roughness `int (g'')^2` of the natural cubic interpolant.
pub fn natural_spline_roughness(grid: &SamplingGrid, values: &[f64]) -> f64 {
    let p = grid.points();
    let m = natural_second_derivatives(p, values);
    p.windows(2)
        .enumerate()
        .map(|(l, w)| {
            let h = w[1] - w[0];
            // g'' is linear between M_l and M_{l+1}.
            h * (m[l] * m[l] + m[l] * m[l + 1] + m[l + 1] * m[l + 1]) / 3.0
        })
        .sum()
}

/// Smoothing-parameter rule for the per-curve smoothing spline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// Generalized cross-validation, chosen per curve.
    Gcv,
    /// Fixed equivalent degrees of freedom `trace(A(lambda))`.
    Df(f64),
}

/// Demmler-Reinsch basis of the cubic smoothing spline on a fixed grid:
/// the smoother is `U diag(1 / (1 + lambda kappa)) U'`.
pub struct SmoothingBasis {
    u: DMatrix<f64>,
    kappa: Vec<f64>,
}

impl SmoothingBasis {
    pub fn new(grid: &SamplingGrid) -> Self {
        let p = grid.points();
        let t = p.len();
        if t < 3 {
            return Self {
                u: DMatrix::identity(t, t),
                kappa: vec![0.0; t],
            };
        }
        let k = t - 2;
        let h: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::zeros(t, k);
        let mut r = DMatrix::zeros(k, k);
        for j in 0..k {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < k {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let rinv_qt = r
            .cholesky()
            .expect("spline penalty matrix is positive definite")
            .solve(&q.transpose());
        let mut penalty = &q * rinv_qt;
        crate::linalg::symmetrize(&mut penalty);
        let eig = SymmetricEigen::new(penalty);
        let kappa = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
        Self {
            u: eig.eigenvectors,
            kappa,
        }
    }

    fn trace(&self, lambda: f64) -> f64 {
        self.kappa.iter().map(|k| 1.0 / (1.0 + lambda * k)).sum()
    }

    fn gcv(&self, coef: &[f64], lambda: f64) -> f64 {
        let t = coef.len() as f64;
        let rss: f64 = coef
            .iter()
            .zip(&self.kappa)
            .map(|(c, k)| {
                let s = lambda * k / (1.0 + lambda * k);
                (c * s).powi(2)
            })
            .sum();
        t * rss / (t - self.trace(lambda)).powi(2)
    }

    fn lambda_range(&self) -> (f64, f64) {
        let kmax = self.kappa.iter().cloned().fold(0.0, f64::max);
        let kmin = self
            .kappa
            .iter()
            .cloned()
            .filter(|&k| k > 1e-9 * kmax)
            .fold(f64::INFINITY, f64::min);
        ((1e-4 / kmax).ln(), (1e4 / kmin).ln())
    }

    fn lambda_for_df(&self, df: f64) -> f64 {
        let (mut lo, mut hi) = self.lambda_range();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.trace(mid.exp()) > df {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    fn gcv_lambda(&self, coef: &[f64]) -> f64 {
        let (lo, hi) = self.lambda_range();
        let steps = 80;
        let grid: Vec<f64> = (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .collect();
        let scores: Vec<f64> = grid.iter().map(|&g| self.gcv(coef, g.exp())).collect();
        let best = scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        // Golden-section refinement on the bracketing cells.
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(steps)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..40 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if self.gcv(coef, c.exp()) <= self.gcv(coef, d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        (0.5 * (a + b)).exp()
    }

    /// Smooths one curve observed on the basis grid.
    pub fn smooth(&self, y: &[f64], rule: Smoothing) -> Vec<f64> {
        let t = y.len();
        let coef: Vec<f64> = (0..t)
            .map(|k| (0..t).map(|i| self.u[(i, k)] * y[i]).sum())
            .collect();
        let lambda = match rule {
            Smoothing::Gcv => self.gcv_lambda(&coef),
            Smoothing::Df(df) => self.lambda_for_df(df.clamp(2.0, t as f64)),
        };
        let shrunk: Vec<f64> = coef
            .iter()
            .zip(&self.kappa)
            .map(|(c, k)| c / (1.0 + lambda * k))
            .collect();
        (0..t)
            .map(|i| (0..t).map(|k| self.u[(i, k)] * shrunk[k]).sum())
            .collect()
    }
}

/// Replaces every response curve by its cubic smoothing-spline fit on the same grid.
pub fn presmooth_dataset(ds: &FunctionalDataset, rule: Smoothing) -> Result<FunctionalDataset> {
    let basis = SmoothingBasis::new(ds.grid());
    let n = ds.n();
    let y = ds.responses();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = y.row(i).iter().cloned().collect();
            basis.smooth(&row, rule)
        })
        .collect();
    let smoothed = DMatrix::from_fn(n, ds.t_len(), |i, l| rows[i][l]);
    ds.with_responses(smoothed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn grid(p: &[f64]) -> SamplingGrid {
        SamplingGrid::new(p.to_vec()).unwrap()
    }

    #[test]
    fn contrast_extraction() {
        let fit = |b: Vec<f64>| PointwiseFit {
            location_index: 0,
            beta_hat: b,
            v_hat: DMatrix::zeros(2, 2),
            objective: 0.0,
            subgrad_norm: 0.0,
            acceptance: 0.0,
        };
        let fits = vec![fit(vec![2.0, 5.0])];
        assert_eq!(extract_contrast(&fits, &Contrast::new(vec![1.0, 0.0]).unwrap()), vec![2.0]);
        assert_eq!(extract_contrast(&fits, &Contrast::new(vec![0.0, 1.0]).unwrap()), vec![5.0]);
        let fits = vec![fit(vec![1.0, 1.0])];
        let v = extract_contrast(&fits, &Contrast::new(vec![1.0, 1.0]).unwrap());
        assert!((v[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn linear_interpolation_examples() {
        let g = grid(&[0.0, 1.0]);
        assert_eq!(linear_interpolate(&g, &[0.0, 2.0], &[0.5]).unwrap(), vec![1.0]);
        let g = grid(&[0.0, 0.3, 1.0, 2.5]);
        let vals = [1.0, -2.0, 4.0, 0.5];
        assert_eq!(linear_interpolate(&g, &vals, g.points()).unwrap(), vals.to_vec());
        let affine: Vec<f64> = g.points().iter().map(|t| 3.0 - 2.0 * t).collect();
        let q = [0.1, 0.77, 2.2];
        let out = linear_interpolate(&g, &affine, &q).unwrap();
        for (o, t) in out.iter().zip(q) {
            assert!((o - (3.0 - 2.0 * t)).abs() < 1e-14);
        }
        assert!(matches!(
            linear_interpolate(&g, &vals, &[3.0]),
            Err(FqrError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn natural_spline_three_knots() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let m = natural_second_derivatives(g.points(), &[0.0, 1.0, 0.0]);
        assert_eq!(m, vec![0.0, -3.0, 0.0]);
        // Closed form on [0, 1]: g(t) = t^3 M_1 / 6 + (1 - M_1 / 6) t.
        let v = spline_interpolate(&g, &[0.0, 1.0, 0.0], 2, &[0.5]).unwrap()[0];
        let closed = -3.0 * 0.125 / 6.0 + 1.5 * 0.5;
        assert!((v - closed).abs() < 1e-15);
        assert!((v - 0.6875).abs() < 1e-15);
    }

    #[test]
    fn spline_orders() {
        let g = grid(&[0.0, 0.4, 1.1, 2.0, 2.2]);
        let vals = [0.3, 1.0, -0.5, 2.0, 1.0];
        let q: Vec<f64> = (0..=22).map(|i| i as f64 * 0.1).collect();
        let a = spline_interpolate(&g, &vals, 1, &q).unwrap();
        let b = linear_interpolate(&g, &vals, &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let affine: Vec<f64> = g.points().iter().map(|t| 1.0 + 0.5 * t).collect();
        let s = spline_interpolate(&g, &affine, 2, &q).unwrap();
        for (v, t) in s.iter().zip(&q) {
            assert!((v - (1.0 + 0.5 * t)).abs() < 1e-12);
        }
        let at_nodes = spline_interpolate(&g, &vals, 2, g.points()).unwrap();
        for (x, y) in at_nodes.iter().zip(vals) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(matches!(
            spline_interpolate(&g, &vals, 3, &q),
            Err(FqrError::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn smoothing_spline_keeps_affine_rows() {
        let g = SamplingGrid::uniform(0.0, 5.0, 40).unwrap();
        let basis = SmoothingBasis::new(&g);
        let c = vec![2.5; 40];
        let out = basis.smooth(&c, Smoothing::Df(4.0));
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-8));
        let lin: Vec<f64> = g.points().iter().map(|t| 1.0 - 0.7 * t).collect();
        for rule in [Smoothing::Gcv, Smoothing::Df(3.0)] {
            let out = basis.smooth(&lin, rule);
            for (a, b) in out.iter().zip(&lin) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heavy_smoothing_reduces_variance() {
        let g = SamplingGrid::uniform(0.0, 1.0, 64).unwrap();
        let basis = SmoothingBasis::new(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        for _ in 0..20 {
            let y: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
            let s = basis.smooth(&y, Smoothing::Df(3.0));
            assert!(var(&s) < var(&y));
        }
    }
}
