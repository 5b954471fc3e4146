//! Mel scale and triangular filter banks.

use crate::error::{Error, Result};

/// Hz to mel: `2595 log10(1 + f / 700)`.
pub fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// Mel to Hz: `700 (10^(m / 2595) - 1)`.
pub fn mel_inv(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters sampled at FFT bin frequencies.
///
/// Filter `m` rises linearly from edge `m` to a peak gain of 1 at edge `m+1`
/// and falls back to zero at edge `m+2`. With many filters over few bins some
/// triangles fall between bin centers; those rows stay all-zero so the shape
/// is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n_mels: usize,
    n_bins: usize,
    /// `n_mels + 2` edge frequencies in Hz, uniformly spaced in mel.
    edges_hz: Vec<f64>,
    /// Row-major `n_mels x n_bins`.
    weights: Vec<f64>,
}

impl FilterBank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || n_fft == 0 {
            return Err(Error::InvalidConfig("filter bank needs n_mels > 0 and n_fft > 0".into()));
        }
        if !(f_min >= 0.0 && f_max > f_min) {
            return Err(Error::DegenerateFilter(format!(
                "frequency range [{f_min}, {f_max}] Hz is empty"
            )));
        }
        let lo = mel(f_min);
        let hi = mel(f_max);
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_inv(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        if edges_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateFilter("mel edges collapse".into()));
        }
        let n_bins = n_fft / 2 + 1;
        let mut bank = FilterBank {
            n_mels,
            n_bins,
            edges_hz,
            weights: vec![0.0; n_mels * n_bins],
        };
        for m in 0..n_mels {
            for k in 0..n_bins {
                let f = k as f64 * sample_rate / n_fft as f64;
                bank.weights[m * n_bins + k] = bank.gain(m, f);
            }
        }
        Ok(bank)
    }

    /// Continuous gain of filter `m` at frequency `f` (Hz).
    pub fn gain(&self, m: usize, f: f64) -> f64 {
        let (lo, c, hi) = (self.edges_hz[m], self.edges_hz[m + 1], self.edges_hz[m + 2]);
        let up = (f - lo) / (c - lo);
        let down = (hi - f) / (hi - c);
        up.min(down).max(0.0)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `mel[m] = sum_k power[k] * F[m][k]`, i.e. one row of `P F^T`.
    pub fn apply_into(&self, power: &[f64], out: &mut [f64]) {
        assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_reference_points() {
        assert_eq!(mel(0.0), 0.0);
        assert!((mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((mel(700.0) - 781.1729).abs() < 1e-4);
        assert!((mel_inv(mel(50.0)) - 50.0).abs() < 1e-9 * 50.0);
    }

    #[test]
    fn mel_is_strictly_increasing_and_invertible_on_band() {
        let mut prev = -1.0;
        for i in 0..=5000 {
            let f = 50.0 * i as f64 / 5000.0;
            let m = mel(f);
            assert!(m > prev);
            prev = m;
            if f > 0.0 {
                assert!(((mel_inv(m) - f) / f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_bank_shape_and_bounds() {
        let fb = FilterBank::new(40, 32, 100.0, 0.0, 50.0).unwrap();
        assert_eq!((fb.n_mels(), fb.n_bins()), (40, 17));
        assert_eq!(fb.weights().len(), 40 * 17);
        assert!(fb.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        assert_eq!(fb.edges_hz().len(), 42);
        assert!((fb.edges_hz()[41] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn peak_gain_is_one_at_center() {
        let fb = FilterBank::new(40, 32, 100.0, 0.0, 50.0).unwrap();
        for m in 0..40 {
            let c = fb.edges_hz()[m + 1];
            assert!((fb.gain(m, c) - 1.0).abs() < 1e-12);
            assert_eq!(fb.gain(m, fb.edges_hz()[m]), 0.0);
            assert!(fb.gain(m, fb.edges_hz()[m + 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn each_row_has_contiguous_support() {
        let fb = FilterBank::new(40, 32, 100.0, 0.0, 50.0).unwrap();
        for m in 0..40 {
            let nz: Vec<usize> = (0..17).filter(|&k| fb.row(m)[k] > 0.0).collect();
            if let (Some(first), Some(last)) = (nz.first(), nz.last()) {
                assert_eq!(last - first + 1, nz.len());
            }
        }
    }

    #[test]
    fn empty_range_is_degenerate() {
        assert!(matches!(
            FilterBank::new(40, 32, 100.0, 10.0, 10.0),
            Err(Error::DegenerateFilter(_))
        ));
    }
}
