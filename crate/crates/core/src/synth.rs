//! Synthetic five-finger pulse recordings.
//!
//! Each sign is a finger mask plus a pulse rhythm. Active fingers emit trains
//! of biphasic pulses (a Gaussian bump followed by a wider, shallower
//! undershoot); inactive fingers carry only the noise floor, plus optional
//! crosstalk from the active ones.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, write_recording, ClassLabel, Frame, ManifestEntry, Recording, MANIFEST_FILE, NUM_CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, Rng};

/// Per-sign activation pattern and rhythm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTemplate {
    /// Thumb, index, middle, ring, little.
    pub fingers: [bool; NUM_CHANNELS],
    /// Mean time between pulses, seconds.
    pub period_s: f64,
    /// Gaussian standard deviation of the positive lobe, seconds.
    pub width_s: f64,
    /// Undershoot depth as a fraction of the peak.
    pub undershoot: f64,
}

const fn tpl(mask: u8, period_s: f64, width_s: f64, undershoot: f64) -> SignTemplate {
    let mut fingers = [false; NUM_CHANNELS];
    let mut i = 0;
    while i < NUM_CHANNELS {
        fingers[i] = mask & (1 << (NUM_CHANNELS - 1 - i)) != 0;
        i += 1;
    }
    SignTemplate {
        fingers,
        period_s,
        width_s,
        undershoot,
    }
}

/// Templates in class-index order (1, 2, 3, 4, 5, A, B, C, D, E, F). Masks
/// are written thumb-first, so `0b01000` is the index finger alone. Several
/// letters reuse a digit's mask and differ only in rhythm.
pub const TEMPLATES: [SignTemplate; NUM_CLASSES] = [
    tpl(0b01000, 0.25, 0.03, 0.35), // 1
    tpl(0b01100, 0.25, 0.03, 0.35), // 2
    tpl(0b11100, 0.25, 0.03, 0.35), // 3
    tpl(0b01111, 0.25, 0.03, 0.35), // 4
    tpl(0b11111, 0.25, 0.03, 0.35), // 5
    tpl(0b10000, 0.20, 0.025, 0.30), // A
    tpl(0b01111, 0.35, 0.04, 0.50), // B
    tpl(0b11111, 0.35, 0.04, 0.25), // C
    tpl(0b01000, 0.35, 0.04, 0.50), // D
    tpl(0b00011, 0.20, 0.025, 0.30), // E
    tpl(0b10011, 0.30, 0.035, 0.25), // F
];

pub fn template(label: ClassLabel) -> SignTemplate {
    TEMPLATES[label.index()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub recordings_per_class: usize,
    /// Mean pulse peak, volts.
    pub amplitude: f64,
    /// Peaks are drawn uniformly from `amplitude * [1 - j, 1 + j]`.
    pub amplitude_jitter: f64,
    /// Relative standard deviation of each inter-pulse interval.
    pub timing_jitter: f64,
    /// Per-template period is scaled by a per-recording factor drawn
    /// uniformly from `[1 - tempo_jitter, 1 + tempo_jitter]`.
    pub tempo_jitter: f64,
    /// Fraction of the active-finger signal leaking into inactive fingers.
    pub crosstalk: f64,
    /// Noise floor standard deviation, volts. Noise is truncated at 6 sigma.
    pub noise_sigma: f64,
    /// Each finger trails the shared rhythm by up to this many samples.
    pub finger_lag_max: usize,
    /// Probability that a frame is an all-zero dead-sensor row.
    pub dead_row_prob: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    /// The calibrated difficulty used by the model comparisons.
    fn default() -> Self {
        SynthConfig {
            sample_rate: 100.0,
            len_min: 200,
            len_max: 500,
            recordings_per_class: 20,
            amplitude: 1.0,
            amplitude_jitter: 0.2,
            timing_jitter: 0.1,
            tempo_jitter: 0.08,
            crosstalk: 0.05,
            noise_sigma: 0.1,
            finger_lag_max: 2,
            dead_row_prob: 0.002,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    /// Low-noise, low-jitter corpus for learnability checks.
    pub fn easy() -> Self {
        SynthConfig {
            amplitude_jitter: 0.1,
            timing_jitter: 0.05,
            tempo_jitter: 0.03,
            crosstalk: 0.0,
            noise_sigma: 0.05,
            finger_lag_max: 0,
            ..SynthConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(SynthConfig::default()),
            "easy" => Ok(SynthConfig::easy()),
            other => Err(Error::InvalidConfig(format!("unknown synth preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.recordings_per_class < 3 {
            return bad("recordings_per_class must be at least 3");
        }
        if self.len_min == 0 || self.len_min > self.len_max {
            return bad("need 0 < len_min <= len_max");
        }
        if !(self.sample_rate > 0.0 && self.amplitude > 0.0) {
            return bad("sample_rate and amplitude must be positive");
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) || !(0.0..1.0).contains(&self.tempo_jitter) {
            return bad("amplitude_jitter and tempo_jitter must lie in [0, 1)");
        }
        if self.timing_jitter < 0.0 || self.noise_sigma < 0.0 || self.crosstalk < 0.0 {
            return bad("jitter, crosstalk and noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.dead_row_prob) {
            return bad("dead_row_prob must lie in [0, 1]");
        }
        Ok(())
    }

    /// Largest absolute noiseless value a recording can contain.
    pub fn amplitude_bound(&self) -> f64 {
        self.amplitude * (1.0 + self.amplitude_jitter)
    }
}

fn biphasic(t: f64, center: f64, width: f64, undershoot: f64) -> f64 {
    let lag = center + 2.5 * width;
    let wide = 1.5 * width;
    (-0.5 * ((t - center) / width).powi(2)).exp() - undershoot * (-0.5 * ((t - lag) / wide).powi(2)).exp()
}

/// Noiseless pulse train of `n` samples, saturated at the amplitude bound.
fn pulse_train(n: usize, tpl: &SignTemplate, cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let sr = cfg.sample_rate;
    let tempo = 1.0 + cfg.tempo_jitter * (2.0 * rng.random::<f64>() - 1.0);
    let period = tpl.period_s * tempo * sr;
    let width = tpl.width_s * sr;
    let jitter = Normal::new(0.0, cfg.timing_jitter.max(0.0)).expect("finite sigma");
    let mut centers = Vec::new();
    let mut c = -period * rng.random::<f64>();
    while c < n as f64 + 4.0 * width {
        centers.push((c, cfg.amplitude * (1.0 + cfg.amplitude_jitter * (2.0 * rng.random::<f64>() - 1.0))));
        c += period * (1.0 + jitter.sample(rng)).max(0.25);
    }
    let bound = cfg.amplitude_bound();
    (0..n)
        .map(|i| {
            let t = i as f64;
            let v: f64 = centers
                .iter()
                .filter(|(c, _)| (t - c).abs() < 10.0 * width)
                .map(|&(c, a)| a * biphasic(t, c, width, tpl.undershoot))
                .sum();
            v.clamp(-bound, bound)
        })
        .collect()
}

fn truncated_noise(sigma: f64, rng: &mut Rng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 6.0 * sigma {
            return v;
        }
    }
}

/// One recording of `label`. Deterministic in `(cfg.rng_seed, label, index)`.
pub fn generate_recording(label: ClassLabel, index: usize, cfg: &SynthConfig) -> Recording {
    let stream = (label.index() * cfg.recordings_per_class.max(1) + index) as u64;
    let mut rng = derived_rng(cfg.rng_seed, "synth", stream);
    let n = rng.random_range(cfg.len_min..=cfg.len_max);
    let tpl = template(label);
    // Active fingers share one rhythm with a small per-finger lag.
    let base = pulse_train(n + cfg.finger_lag_max, &tpl, cfg, &mut rng);
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(NUM_CHANNELS);
    for active in tpl.fingers {
        let lag = rng.random_range(0..=cfg.finger_lag_max);
        let gain = if active { 1.0 } else { cfg.crosstalk };
        channels.push(base[lag..lag + n].iter().map(|v| gain * v).collect());
    }
    let samples: Vec<Frame> = (0..n)
        .map(|i| {
            if rng.random::<f64>() < cfg.dead_row_prob {
                return [0.0; NUM_CHANNELS];
            }
            let mut f = [0.0; NUM_CHANNELS];
            for (c, v) in f.iter_mut().enumerate() {
                *v = channels[c][i] + truncated_noise(cfg.noise_sigma, &mut rng);
            }
            f
        })
        .collect();
    Recording {
        id: format!("{}/{:03}", label.symbol(), index),
        label,
        samples,
    }
}

/// `recordings_per_class` recordings for every class, class-major order.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    Ok(ClassLabel::all()
        .flat_map(|l| (0..cfg.recordings_per_class).map(move |i| (l, i)))
        .map(|(l, i)| generate_recording(l, i, cfg))
        .collect())
}

/// Write one CSV per recording under `<dir>/<label>/` plus a manifest.
pub fn write_corpus(dir: &Path, recordings: &[Recording]) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::with_capacity(recordings.len());
    let mut written = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let rel = PathBuf::from(format!("{}.csv", rec.id));
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_recording(&path, rec)?;
        entries.push(ManifestEntry {
            path: rel,
            label: rec.label,
        });
        written.push(path);
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(written)
}
