//! Primal-dual interior-point solver for the check-loss linear program.
//!
//! The solver works on the bounded dual
//!
//! ```text
//!   max  y'a   s.t.  X'a = (1 - tau) X'1,   0 <= a <= 1
//! ```
//!
//! with Mehrotra predictor-corrector steps; the coefficient vector is the
//! multiplier of the equality constraint. The interior-point iterate sits in the
//! relative interior of the optimal face, so it is polished onto a basic
//! (vertex) solution `beta = X_S^{-1} y_S` whose optimality is certified from
//! the subgradient conditions.

use nalgebra::{DMatrix, DVector};

use super::loss::{objective, QuantileLevel};

const STEP_FRACTION: f64 = 0.99995;

/// Result of one check-loss minimization.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final relative complementarity gap of the interior-point phase.
    pub gap: f64,
    /// Whether the returned vertex passed the optimality certificate.
    pub certified: bool,
    pub converged: bool,
}

/// Minimizes `sum_i rho_tau(y_i - x_i'beta)`. `x_cols` is the column-major
/// `n x d` design.
pub fn solve_quantile_regression(
    y: &[f64],
    x_cols: &[f64],
    d: usize,
    tau: QuantileLevel,
    tolerance: f64,
    max_iterations: usize,
) -> LpSolution {
    let n = y.len();
    debug_assert_eq!(x_cols.len(), n * d);
    let ipm = interior_point(y, x_cols, d, tau.value(), tolerance, max_iterations);
    let ipm_obj = objective(y, x_cols, &ipm.beta, tau);

    match polish(y, x_cols, d, tau, &ipm.beta) {
        Some(v) if v.certified || v.objective <= ipm_obj * (1.0 + 1e-12) + 1e-300 => LpSolution {
            beta: v.beta,
            objective: v.objective,
            iterations: ipm.iterations,
            gap: ipm.gap,
            certified: v.certified,
            converged: ipm.converged || v.certified,
        },
        _ => LpSolution {
            beta: ipm.beta,
            objective: ipm_obj,
            iterations: ipm.iterations,
            gap: ipm.gap,
            certified: false,
            converged: ipm.converged,
        },
    }
}

struct IpmResult {
    beta: Vec<f64>,
    iterations: usize,
    gap: f64,
    converged: bool,
}

fn xt_times(x_cols: &[f64], n: usize, d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|j| {
            x_cols[j * n..(j + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn x_times(x_cols: &[f64], n: usize, d: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for j in 0..d {
        let bj = b[j];
        for (o, x) in out.iter_mut().zip(&x_cols[j * n..(j + 1) * n]) {
            *o += x * bj;
        }
    }
    out
}

fn least_squares(y: &[f64], x_cols: &[f64], n: usize, d: usize) -> Vec<f64> {
    let x = DMatrix::from_column_slice(n, d, x_cols);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty).iter().cloned().collect(),
        None => xtx
            .pseudo_inverse(1e-12)
            .map(|p| (p * xty).iter().cloned().collect())
            .unwrap_or_else(|_| vec![0.0; d]),
    }
}

/// Step length keeping `v + alpha dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn interior_point(
    y: &[f64],
    x_cols: &[f64],
    d: usize,
    tau: f64,
    tolerance: f64,
    max_iterations: usize,
) -> IpmResult {
    let n = y.len();
    // Primal (dual-of-QR) variables a = x, slack s = 1 - a.
    let mut x = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let ones = vec![1.0; n];
    let b: Vec<f64> = xt_times(x_cols, n, d, &ones)
        .into_iter()
        .map(|v| v * (1.0 - tau))
        .collect();

    let beta0 = least_squares(y, x_cols, n, d);
    let fit0 = x_times(x_cols, n, d, &beta0);
    let r0: Vec<f64> = y.iter().zip(&fit0).map(|(a, b)| a - b).collect();
    let mean_abs = r0.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let delta = (0.1 * mean_abs).max(1e-10 * (1.0 + ymax));
    let mut lambda: Vec<f64> = beta0.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r0.iter().map(|r| (-r).max(0.0) + delta).collect();
    let mut w: Vec<f64> = r0.iter().map(|r| r.max(0.0) + delta).collect();

    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    let mut theta = vec![0.0; n];
    while iterations < max_iterations {
        // Residuals.
        let ax = xt_times(x_cols, n, d, &x);
        let r_p: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let r_u: Vec<f64> = (0..n).map(|i| 1.0 - x[i] - s[i]).collect();
        let a_lam = x_times(x_cols, n, d, &lambda);
        let r_d: Vec<f64> = (0..n).map(|i| -y[i] - a_lam[i] - z[i] + w[i]).collect();

        let comp: f64 = (0..n).map(|i| x[i] * z[i] + s[i] * w[i]).sum();
        let primal_obj: f64 = -(0..n).map(|i| y[i] * x[i]).sum::<f64>();
        gap = comp / (1.0 + primal_obj.abs());
        let infeas = r_p.iter().map(|v| v.abs()).fold(0.0, f64::max)
            / (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let dual_infeas = r_d.iter().map(|v| v.abs()).fold(0.0, f64::max) / (1.0 + ymax);
        if gap < tolerance && infeas < 1e-9 && dual_infeas < 1e-9 {
            converged = true;
            break;
        }
        iterations += 1;
        let mu = comp / (2 * n) as f64;

        for i in 0..n {
            theta[i] = 1.0 / (z[i] / x[i] + w[i] / s[i]);
        }
        // Normal matrix X' Theta X.
        let mut m = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let cj = &x_cols[j * n..(j + 1) * n];
            for k in 0..=j {
                let ck = &x_cols[k * n..(k + 1) * n];
                let v: f64 = (0..n).map(|i| cj[i] * ck[i] * theta[i]).sum();
                m[(j, k)] = v;
                m[(k, j)] = v;
            }
        }
        let chol = match m.clone().cholesky() {
            Some(c) => c,
            None => break,
        };

        let solve = |r_xz: &[f64], r_sw: &[f64]| {
            let h: Vec<f64> = (0..n)
                .map(|i| r_d[i] - r_xz[i] / x[i] + r_sw[i] / s[i] - w[i] / s[i] * r_u[i])
                .collect();
            let th: Vec<f64> = (0..n).map(|i| theta[i] * h[i]).collect();
            let a_th = xt_times(x_cols, n, d, &th);
            let rhs = DVector::from_iterator(d, (0..d).map(|j| r_p[j] + a_th[j]));
            let dlam: Vec<f64> = chol.solve(&rhs).iter().cloned().collect();
            let at_dlam = x_times(x_cols, n, d, &dlam);
            let dx: Vec<f64> = (0..n).map(|i| theta[i] * (at_dlam[i] - h[i])).collect();
            let ds: Vec<f64> = (0..n).map(|i| r_u[i] - dx[i]).collect();
            let dz: Vec<f64> = (0..n).map(|i| (r_xz[i] - z[i] * dx[i]) / x[i]).collect();
            let dw: Vec<f64> = (0..n).map(|i| (r_sw[i] - w[i] * ds[i]) / s[i]).collect();
            (dlam, dx, ds, dz, dw)
        };

        // Predictor.
        let r_xz: Vec<f64> = (0..n).map(|i| -x[i] * z[i]).collect();
        let r_sw: Vec<f64> = (0..n).map(|i| -s[i] * w[i]).collect();
        let (_, dx_a, ds_a, dz_a, dw_a) = solve(&r_xz, &r_sw);
        let ap = max_step(&x, &dx_a).min(max_step(&s, &ds_a)).min(1.0);
        let ad = max_step(&z, &dz_a).min(max_step(&w, &dw_a)).min(1.0);
        let mu_aff: f64 = (0..n)
            .map(|i| {
                (x[i] + ap * dx_a[i]) * (z[i] + ad * dz_a[i])
                    + (s[i] + ap * ds_a[i]) * (w[i] + ad * dw_a[i])
            })
            .sum::<f64>()
            / (2 * n) as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);

        // Corrector.
        let r_xz: Vec<f64> = (0..n)
            .map(|i| sigma * mu - x[i] * z[i] - dx_a[i] * dz_a[i])
            .collect();
        let r_sw: Vec<f64> = (0..n)
            .map(|i| sigma * mu - s[i] * w[i] - ds_a[i] * dw_a[i])
            .collect();
        let (dlam, dx, ds, dz, dw) = solve(&r_xz, &r_sw);
        let ap = (STEP_FRACTION * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        for i in 0..n {
            x[i] += ap * dx[i];
            s[i] += ap * ds[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        for j in 0..d {
            lambda[j] += ad * dlam[j];
        }
    }

    IpmResult {
        beta: lambda.iter().map(|v| -v).collect(),
        iterations,
        gap,
        converged,
    }
}

struct Vertex {
    beta: Vec<f64>,
    objective: f64,
    certified: bool,
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

/// Searches basic solutions built from the observations with the smallest
/// residuals at `beta` and returns the best one. Among certified optimal
/// vertices with equal objective, the lexicographically smallest coefficient
/// vector is returned (the lower endpoint when the minimizer is an interval).
fn polish(y: &[f64], x_cols: &[f64], d: usize, tau: QuantileLevel, beta: &[f64]) -> Option<Vertex> {
    let n = y.len();
    let fit = x_times(x_cols, n, d, beta);
    let mut order: Vec<usize> = (0..n).collect();
    let resid: Vec<f64> = (0..n).map(|i| (y[i] - fit[i]).abs()).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
    let pool = &order[..n.min(d + 3)];
    let t = tau.value();
    let xscale = x_cols.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    let mut best: Option<Vertex> = None;
    for subset in combinations(pool.len(), d) {
        let rows: Vec<usize> = subset.iter().map(|&k| pool[k]).collect();
        let xs = DMatrix::from_fn(d, d, |r, c| x_cols[c * n + rows[r]]);
        let lu = xs.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det.abs() <= 1e-12 * xscale.powi(d as i32) {
            continue;
        }
        let ys = DVector::from_iterator(d, rows.iter().map(|&i| y[i]));
        let sol = match lu.solve(&ys) {
            Some(s) => s,
            None => continue,
        };
        let cand: Vec<f64> = sol.iter().cloned().collect();
        let obj = objective(y, x_cols, &cand, tau);

        // Certificate: g_S = X_S'^{-1} (-sum_{i not in S} x_i rho'(r_i)) must lie in [tau-1, tau].
        let cfit = x_times(x_cols, n, d, &cand);
        let yscale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut rhs = DVector::<f64>::zeros(d);
        let mut degenerate = false;
        for i in 0..n {
            if rows.contains(&i) {
                continue;
            }
            let r = y[i] - cfit[i];
            if r.abs() <= 1e-12 * yscale {
                degenerate = true;
            }
            let slope = if r > 0.0 { t } else { t - 1.0 };
            for j in 0..d {
                rhs[j] -= x_cols[j * n + i] * slope;
            }
        }
        let certified = !degenerate
            && xs
                .transpose()
                .lu()
                .solve(&rhs)
                .map(|g| g.iter().all(|&v| v >= t - 1.0 - 1e-9 && v <= t + 1e-9))
                .unwrap_or(false);

        let better = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-12 * (1.0 + b.objective.abs());
                if certified != b.certified {
                    certified
                } else if obj < b.objective - tol {
                    true
                } else if obj <= b.objective + tol {
                    cand.iter()
                        .zip(&b.beta)
                        .find(|(a, c)| a != c)
                        .map(|(a, c)| a < c)
                        .unwrap_or(false)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some(Vertex {
                beta: cand,
                objective: obj,
                certified,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn odd_median() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x = [1.0; 5];
        let s = solve_quantile_regression(&y, &x, 1, q(0.5), 1e-10, 100);
        assert_eq!(s.beta, vec![3.0]);
        assert!(s.certified);
        assert_eq!(s.objective, 3.0);
    }

    #[test]
    fn even_median_takes_lower_endpoint() {
        let y = [4.0, 1.0, 3.0, 2.0];
        let x = [1.0; 4];
        let s = solve_quantile_regression(&y, &x, 1, q(0.5), 1e-10, 100);
        // Brute force over the order statistics: every candidate in [2, 3] attains 2.0.
        let brute = y
            .iter()
            .map(|&c| objective(&y, &x, &[c], q(0.5)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(brute, 2.0);
        assert_eq!(s.objective, brute);
        assert_eq!(s.beta, vec![2.0]);
    }

    #[test]
    fn square_system_is_interpolated() {
        // Rows (1, 0) and (1, 1): beta = (2, 3) fits exactly.
        let y = [2.0, 5.0];
        let x = [1.0, 1.0, 0.0, 1.0];
        let s = solve_quantile_regression(&y, &x, 2, q(0.3), 1e-10, 100);
        assert!((s.beta[0] - 2.0).abs() < 1e-12 && (s.beta[1] - 3.0).abs() < 1e-12);
        assert!(s.objective.abs() < 1e-12);
    }

    #[test]
    fn constant_response() {
        let y = [1.5; 6];
        let x = [1.0; 6];
        let s = solve_quantile_regression(&y, &x, 1, q(0.9), 1e-10, 100);
        assert_eq!(s.beta, vec![1.5]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 3).len(), 10);
        assert_eq!(combinations(4, 1).len(), 4);
    }
}
