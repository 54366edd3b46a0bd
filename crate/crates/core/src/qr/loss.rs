use serde::Serialize;

use crate::error::{FqrError, Result};

/// Quantile level `tau`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(FqrError::InvalidArgument(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Check loss `rho_tau(u) = (tau - 1{u <= 0}) u`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    let t = tau.0;
    if u <= 0.0 {
        (t - 1.0) * u
    } else {
        t * u
    }
}

/// Score `psi(Y, X; beta, tau) = X (1{Y <= X'beta} - tau)`.
pub fn psi(y: f64, x: &[f64], beta: &[f64], tau: QuantileLevel) -> Result<Vec<f64>> {
    if x.len() != beta.len() {
        return Err(FqrError::DimensionMismatch(format!(
            "psi: x has length {} but beta has length {}",
            x.len(),
            beta.len()
        )));
    }
    let fitted: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    let w = if y <= fitted { 1.0 } else { 0.0 } - tau.0;
    Ok(x.iter().map(|v| v * w).collect())
}

/// Summed check loss of the residuals `y - X beta`. `x_cols` holds the design
/// column-major (`x_cols[j*n + i]`).
pub fn objective(y: &[f64], x_cols: &[f64], beta: &[f64], tau: QuantileLevel) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let fit: f64 = beta.iter().enumerate().map(|(j, b)| x_cols[j * n + i] * b).sum();
            check_loss(y[i] - fit, tau)
        })
        .sum()
}

/// `|| (1/n) sum_i psi(Y_i, X_i; beta, tau) ||`.
pub fn subgradient_norm(y: &[f64], x_cols: &[f64], beta: &[f64], tau: QuantileLevel) -> f64 {
    let n = y.len();
    let d = beta.len();
    let mut acc = vec![0.0; d];
    for i in 0..n {
        let fit: f64 = (0..d).map(|j| x_cols[j * n + i] * beta[j]).sum();
        let w = if y[i] <= fit { 1.0 } else { 0.0 } - tau.0;
        for j in 0..d {
            acc[j] += x_cols[j * n + i] * w;
        }
    }
    acc.iter().map(|v| (v / n as f64).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, q(0.5)), 1.0);
        assert!((check_loss(-1.0, q(0.8)) - 0.2).abs() < 1e-15);
        assert_eq!(check_loss(0.0, q(0.3)), 0.0);
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(0.0, &[1.0], &[1.0], q(0.5)).unwrap(), vec![0.5]);
        assert_eq!(psi(2.0, &[1.0], &[1.0], q(0.5)).unwrap(), vec![-0.5]);
        assert_eq!(
            psi(1.0, &[1.0, 2.0], &[1.0, 0.0], q(0.25)).unwrap(),
            vec![0.75, 1.5]
        );
        assert!(psi(1.0, &[1.0, 2.0], &[1.0], q(0.25)).is_err());
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn check_loss_is_piecewise_linear(u in -1e6f64..1e6, t in 0.001f64..0.999) {
            let tau = q(t);
            let v = check_loss(u, tau);
            prop_assert!(v >= 0.0);
            let expect = if u > 0.0 { u * t } else { u * (t - 1.0) };
            prop_assert!((v - expect).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }
}
