//! Orthonormal Daubechies-4 transform with periodic boundary, used to smooth
//! covariance matrices by discarding off-diagonal wavelet-space entries.

use nalgebra::DMatrix;

/// D4 scaling filter.
pub fn d4_lowpass() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let norm = 4.0 * 2f64.sqrt();
    [
        (1.0 + s3) / norm,
        (3.0 + s3) / norm,
        (3.0 - s3) / norm,
        (1.0 - s3) / norm,
    ]
}

fn d4_highpass() -> [f64; 4] {
    let h = d4_lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

/// Full-depth periodic D4 analysis of a signal whose length is a power of two.
pub fn dwt_full(signal: &[f64]) -> Vec<f64> {
    let p = signal.len();
    assert!(p.is_power_of_two(), "signal length must be a power of two");
    let h = d4_lowpass();
    let g = d4_highpass();
    let mut out = signal.to_vec();
    let mut len = p;
    let mut scratch = vec![0.0; p];
    while len >= 2 {
        let half = len / 2;
        for i in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for k in 0..4 {
                let v = out[(2 * i + k) % len];
                a += h[k] * v;
                d += g[k] * v;
            }
            scratch[i] = a;
            scratch[half + i] = d;
        }
        out[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
    out
}

/// Analysis matrix `W` (`p x p`, orthonormal) for `p` a power of two.
pub fn dwt_matrix(p: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = dwt_full(&e);
        for i in 0..p {
            w[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    w
}

/// Maps padded index `i` onto `0..len` by half-sample symmetric reflection.
pub fn reflect_index(i: usize, len: usize) -> usize {
    let period = 2 * len;
    let r = i % period;
    if r < len {
        r
    } else {
        period - 1 - r
    }
}

/// `W' diag(W S W') W` restricted to the leading `T x T` block, where `S` is
/// `sigma` padded by symmetric reflection to the next power of two.
pub fn smooth_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let t = sigma.nrows();
    let p = t.next_power_of_two();
    let w = dwt_matrix(p);
    // Fold the padding into the transform: V = W E with E the reflection map.
    let mut v = DMatrix::zeros(p, t);
    for k in 0..p {
        for i in 0..p {
            v[(k, reflect_index(i, t))] += w[(k, i)];
        }
    }
    let sv = &v * sigma;
    let diag: Vec<f64> = (0..p)
        .map(|k| (0..t).map(|m| sv[(k, m)] * v[(k, m)]).sum())
        .collect();
    let wt = w.columns(0, t);
    let mut out = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..=i {
            let val: f64 = (0..p).map(|k| wt[(k, i)] * diag[k] * wt[(k, j)]).sum();
            out[(i, j)] = val;
            out[(j, i)] = val;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_is_orthonormal() {
        for p in [1usize, 2, 4, 8, 64] {
            let w = dwt_matrix(p);
            let eye = &w * w.transpose();
            assert!((eye - DMatrix::identity(p, p)).amax() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn identity_is_fixed() {
        let s = smooth_covariance(&DMatrix::identity(16, 16));
        assert!((s - DMatrix::identity(16, 16)).amax() < 1e-12);
    }

    #[test]
    fn reflection_padding() {
        let idx: Vec<usize> = (0..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 4, 3, 2]);
        assert_eq!(reflect_index(12, 3), 0);
    }
}
