//! Small dense linear-algebra helpers shared by the covariance, band and GP code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FqrError, Result};

/// Replaces `m` by `(m + m')/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Diagonal shift needed to make `m` positive definite: zero when a Cholesky
/// factorization already succeeds, otherwise `|lambda_min| + 1e-10`.
pub fn psd_shift(m: &DMatrix<f64>) -> f64 {
    if m.clone().cholesky().is_some() {
        return 0.0;
    }
    let lmin = min_eigenvalue(m);
    lmin.min(0.0).abs() + 1e-10
}

/// Lower-triangular factor `L` with `L L' = m + shift I`.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    pub lower: DMatrix<f64>,
    /// Diagonal shift that was added before factorization.
    pub shift: f64,
}

impl GaussianFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(FqrError::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut sym = m.clone();
        symmetrize(&mut sym);
        let mut shift = psd_shift(&sym);
        // Eigenvalue round-off can leave the shifted matrix just short of
        // positive definite; retry with a growing shift.
        for _ in 0..8 {
            let mut shifted = sym.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += shift;
            }
            if let Some(ch) = shifted.cholesky() {
                if shift > 0.0 {
                    log::debug!("covariance repaired with diagonal shift {shift:e}");
                }
                return Ok(Self {
                    lower: ch.l(),
                    shift,
                });
            }
            let scale = sym.diagonal().amax().max(1e-300);
            shift = (shift * 10.0).max(1e-12 * scale);
        }
        Err(FqrError::Factorization(
            "Cholesky factorization failed after PSD repair".into(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Writes one draw of `N(0, L L')` into `out`, using `z` as scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let n = self.dim();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let row = self.lower.row(i);
            let mut acc = 0.0;
            for j in 0..=i {
                acc += row[j] * z[j];
            }
            out[i] = acc;
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|ch| ch.solve(b))
}
