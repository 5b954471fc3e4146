//! Iterative radix-2 FFT and power spectra.

use std::f64::consts::PI;

/// In-place forward DFT `X[k] = sum x[n] e^{-2 pi i k n / N}`.
///
/// Panics if the length is not a power of two or the slices differ.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len(), "real and imaginary parts differ in length");
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (ang * k as f64).sin_cos();
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// `|X[k]|^2 / n_fft` for all `n_fft` bins. The frame is zero-padded to
/// `n_fft` samples.
pub fn full_power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    assert!(frame.len() <= n_fft, "frame longer than FFT size");
    let mut re = vec![0.0; n_fft];
    re[..frame.len()].copy_from_slice(frame);
    let mut im = vec![0.0; n_fft];
    fft_in_place(&mut re, &mut im);
    re.iter()
        .zip(&im)
        .map(|(r, i)| (r * r + i * i) / n_fft as f64)
        .collect()
}

/// One-sided power spectrum: the first `n_fft / 2 + 1` bins of
/// [`full_power_spectrum`].
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut p = full_power_spectrum(frame, n_fft);
    p.truncate(n_fft / 2 + 1);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (j, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = crate::rng::rng_from(3);
        for n in [1usize, 2, 4, 8, 32, 64] {
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut re = x.clone();
                let mut im = vec![0.0; n];
                fft_in_place(&mut re, &mut im);
                for (k, (r, i)) in naive_dft(&x).into_iter().enumerate() {
                    assert!((re[k] - r).abs() < 1e-9 && (im[k] - i).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 32];
        x[0] = 1.0;
        let p = power_spectrum(&x, 32);
        assert_eq!(p.len(), 17);
        assert!(p.iter().all(|v| (v - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn cosine_concentrates_in_its_bin() {
        let x: Vec<f64> = (0..32).map(|n| (2.0 * PI * 4.0 * n as f64 / 32.0).cos()).collect();
        let p = power_spectrum(&x, 32);
        assert!((p[4] - 8.0).abs() < 1e-9);
        for (k, v) in p.iter().enumerate() {
            if k != 4 {
                assert!(v.abs() < 1e-9, "bin {k} = {v}");
            }
        }
        assert!(power_spectrum(&[0.0; 32], 32).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parseval_holds_on_full_spectrum() {
        let mut rng = crate::rng::rng_from(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spec: f64 = full_power_spectrum(&x, 32).iter().sum();
            assert!((energy - spec).abs() < 1e-9 * energy.max(1.0));
        }
    }
}
