//! Orthonormal DCT-II.

use std::f64::consts::PI;

/// Precomputed orthonormal DCT-II basis for one length.
#[derive(Debug, Clone)]
pub struct Dct2 {
    n: usize,
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "DCT length must be positive");
        let mut basis = Vec::with_capacity(n * n);
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for j in 0..n {
                basis.push(scale * (PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64).cos());
            }
        }
        Dct2 { n, basis }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Row-major `n x n` basis matrix `D`, so that `y = D v`.
    pub fn matrix(&self) -> &[f64] {
        &self.basis
    }

    /// Transform into `out`, writing only the first `out.len()` coefficients.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n);
        for (k, y) in out.iter_mut().enumerate().take(self.n) {
            let row = &self.basis[k * self.n..(k + 1) * self.n];
            *y = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(v, &mut out);
        out
    }
}

/// `y[k] = s(k) * sum_j v[j] cos(pi (2j + 1) k / 2n)` with `s(0) = sqrt(1/n)`
/// and `s(k > 0) = sqrt(2/n)`.
pub fn dct2_ortho(v: &[f64]) -> Vec<f64> {
    Dct2::new(v.len()).apply(v)
}
