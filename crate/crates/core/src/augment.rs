//! Stochastic time-domain augmentations, applied to windows before MFCC
//! extraction.
//!
//! Each augmented copy runs noise, time warp, magnitude scaling and circular
//! shift in that order, each gated by its own probability. Copies draw from
//! per-sample derived streams, so output does not depend on processing order.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SequenceWindow;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub noise_p: f64,
    pub warp_sigma: f64,
    pub warp_p: f64,
    pub warp_knots: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub scale_p: f64,
    pub shift_max: usize,
    pub shift_p: f64,
    pub variants_per_sample: usize,
    /// Also expand the validation split. Validation scores then come from
    /// augmented data and read optimistic.
    pub augment_validation: bool,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_sigma: 0.02,
            noise_p: 0.7,
            warp_sigma: 0.2,
            warp_p: 0.6,
            warp_knots: 4,
            scale_lo: 0.9,
            scale_hi: 1.1,
            scale_p: 0.7,
            shift_max: 10,
            shift_p: 0.5,
            variants_per_sample: 2,
            augment_validation: true,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.noise_p, self.warp_p, self.scale_p, self.shift_p];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("augment: probabilities must lie in [0, 1]".into()));
        }
        if self.scale_lo > self.scale_hi {
            return Err(Error::InvalidConfig("augment: scale_lo > scale_hi".into()));
        }
        if self.noise_sigma < 0.0 || self.warp_sigma < 0.0 {
            return Err(Error::InvalidConfig("augment: sigmas must be non-negative".into()));
        }
        if self.warp_knots == 0 {
            return Err(Error::InvalidConfig("augment: warp_knots must be positive".into()));
        }
        Ok(())
    }

    /// Every transform disabled.
    pub fn identity() -> Self {
        AugmentConfig {
            noise_p: 0.0,
            warp_p: 0.0,
            scale_p: 0.0,
            shift_p: 0.0,
            ..Self::default()
        }
    }
}

/// Add i.i.d. `N(0, sigma^2)` noise to every value.
pub fn add_noise(win: &SequenceWindow, sigma: f64, rng: &mut Rng) -> SequenceWindow {
    let mut out = win.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for frame in out.data.iter_mut() {
        for v in frame.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

/// Natural cubic spline through `(xs[i], ys[i])`, xs strictly increasing.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        assert!(n >= 2 && n == ys.len());
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        NaturalSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

fn warp_path(len: usize, sigma: f64, knots: usize, rng: &mut Rng) -> Vec<f64> {
    let last = (len - 1) as f64;
    let xs: Vec<f64> = (0..knots + 2).map(|j| last * j as f64 / (knots + 1) as f64).collect();
    let normal = Normal::new(0.0, sigma * len as f64 / knots as f64).expect("finite sigma");
    let build = |disp: &[f64]| -> Vec<f64> {
        let spline = NaturalSpline::new(&xs, disp);
        let mut tau: Vec<f64> = (0..len)
            .map(|t| (t as f64 + spline.eval(t as f64)).clamp(0.0, last))
            .collect();
        tau[0] = 0.0;
        tau[len - 1] = last;
        tau
    };
    let monotone = |tau: &[f64]| tau.windows(2).all(|w| w[1] >= w[0]);
    let mut disp = vec![0.0; knots + 2];
    for _ in 0..16 {
        for d in disp[1..=knots].iter_mut() {
            *d = normal.sample(rng);
        }
        let tau = build(&disp);
        if monotone(&tau) {
            return tau;
        }
    }
    // Shrink the last draw toward the identity until it is monotone.
    loop {
        disp.iter_mut().for_each(|d| *d *= 0.5);
        let tau = build(&disp);
        if monotone(&tau) {
            return tau;
        }
    }
}

fn resample(x: &[f64], tau: &[f64]) -> Vec<f64> {
    let last = x.len() - 1;
    tau.iter()
        .map(|&t| {
            let i = (t.floor() as usize).min(last);
            let frac = t - i as f64;
            if i == last || frac == 0.0 {
                x[i]
            } else {
                x[i] * (1.0 - frac) + x[i + 1] * frac
            }
        })
        .collect()
}

/// Smoothly remap time through a monotone warp with fixed endpoints.
///
/// Interior spline knots get displacements drawn from
/// `N(0, (sigma * len / knots)^2)`; every channel is resampled on the same
/// warped grid by linear interpolation. Windows shorter than 4 samples are
/// returned unchanged.
pub fn time_warp(win: &SequenceWindow, sigma: f64, knots: usize, rng: &mut Rng) -> SequenceWindow {
    let len = win.len();
    if sigma == 0.0 || len < 4 || knots == 0 {
        return win.clone();
    }
    let tau = warp_path(len, sigma, knots, rng);
    let mut out = win.clone();
    for c in 0..crate::data::NUM_CHANNELS {
        out.set_channel(c, &resample(&win.channel(c), &tau));
    }
    out
}

/// Multiply every value by `s`.
pub fn scale_by(win: &SequenceWindow, s: f64) -> SequenceWindow {
    let mut out = win.clone();
    out.data.iter_mut().flatten().for_each(|v| *v *= s);
    out
}

/// Scale all channels by one factor drawn uniformly from `[lo, hi]`.
pub fn magnitude_scale(win: &SequenceWindow, lo: f64, hi: f64, rng: &mut Rng) -> SequenceWindow {
    let s = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    scale_by(win, s)
}

/// Circular shift: `out[i] = in[(i - k) mod len]`.
pub fn shift_by(win: &SequenceWindow, k: i64) -> SequenceWindow {
    let mut out = win.clone();
    let len = win.len();
    if len == 0 {
        return out;
    }
    let k = k.rem_euclid(len as i64) as usize;
    out.data.rotate_right(k);
    out
}

/// Circular shift by an offset drawn uniformly from `[-max, max]`.
pub fn temporal_shift(win: &SequenceWindow, max: usize, rng: &mut Rng) -> SequenceWindow {
    let m = max as i64;
    shift_by(win, rng.random_range(-m..=m))
}

/// One augmented copy: each transform fires with its own probability.
pub fn augment_once(win: &SequenceWindow, cfg: &AugmentConfig, rng: &mut Rng) -> SequenceWindow {
    let mut out = win.clone();
    if rng.random_bool(cfg.noise_p) {
        out = add_noise(&out, cfg.noise_sigma, rng);
    }
    if rng.random_bool(cfg.warp_p) {
        out = time_warp(&out, cfg.warp_sigma, cfg.warp_knots, rng);
    }
    if rng.random_bool(cfg.scale_p) {
        out = magnitude_scale(&out, cfg.scale_lo, cfg.scale_hi, rng);
    }
    if rng.random_bool(cfg.shift_p) {
        out = temporal_shift(&out, cfg.shift_max, rng);
    }
    out
}

/// Originals followed by `variants_per_sample` augmented copies of each
/// (copy `v` of sample `i` at `n + i * variants + v`).
pub fn augment_dataset(windows: &[SequenceWindow], cfg: &AugmentConfig) -> Result<Vec<SequenceWindow>> {
    cfg.validate()?;
    let v = cfg.variants_per_sample;
    let mut out = Vec::with_capacity(windows.len() * (1 + v));
    out.extend_from_slice(windows);
    for (i, win) in windows.iter().enumerate() {
        for j in 0..v {
            let mut rng = rng::derived_rng(cfg.rng_seed, "augment", (i * v + j) as u64);
            out.push(augment_once(win, cfg, &mut rng));
        }
    }
    Ok(out)
}
