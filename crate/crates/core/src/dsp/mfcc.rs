//! Per-channel MFCC extraction for sensor windows.
//!
//! Each channel goes through: Hamming-windowed framing, one-sided power
//! spectrum `|FFT|^2 / n_fft`, mel energies `P F^T`, `ln(. + eps)`, an
//! orthonormal DCT-II and truncation to `n_mfcc` coefficients.
//!
//! With [`DctAxis::Temporal`] (the default) the DCT runs along the frame axis
//! of the `n_frames x n_mels` log-mel matrix and the first `n_mfcc` mel
//! columns are kept, giving `n_frames x n_mfcc`. [`DctAxis::Mel`] is the
//! classical variant: DCT across mel bands per frame, first `n_mfcc` kept.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dct::Dct2;
use super::fft::power_spectrum;
use super::mel::FilterBank;
use crate::data::NUM_CHANNELS;
use crate::error::{Error, Result};
use crate::preprocess::SequenceWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DctAxis {
    Temporal,
    Mel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: f64,
    pub eps: f64,
    pub dct_axis: DctAxis,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len: 32,
            hop: 8,
            n_fft: 32,
            n_mels: 40,
            n_mfcc: 12,
            f_min: 0.0,
            f_max: 50.0,
            sample_rate: 100.0,
            eps: 1e-10,
            dct_axis: DctAxis::Temporal,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("mfcc: {msg}")));
        if self.frame_len == 0 || self.hop == 0 {
            return bad("frame_len and hop must be positive");
        }
        if self.n_fft < self.frame_len {
            return bad("n_fft must be at least frame_len");
        }
        if !self.n_fft.is_power_of_two() {
            return bad("n_fft must be a power of two");
        }
        if self.f_max > self.sample_rate / 2.0 + 1e-12 {
            return bad("f_max exceeds the Nyquist frequency");
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad("n_mfcc must be in 1..=n_mels");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }

    /// Frames produced for a signal of length `len` (0 when too short).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (L - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Split a signal into Hamming-windowed frames; frame `i` covers samples
/// `[i * hop, i * hop + frame_len)`.
pub fn frame_signal(x: &[f64], cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let n = cfg.n_frames(x.len());
    if n == 0 {
        return Err(Error::SequenceTooShort {
            len: x.len(),
            frame_len: cfg.frame_len,
        });
    }
    let win = hamming(cfg.frame_len);
    Ok((0..n)
        .map(|i| {
            x[i * cfg.hop..i * cfg.hop + cfg.frame_len]
                .iter()
                .zip(&win)
                .map(|(a, b)| a * b)
                .collect()
        })
        .collect())
}

/// Feature block of shape `(channels, n_frames, n_coeffs)`, C-order.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccTensor {
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub n_frames: usize,
    pub n_coeffs: usize,
}

impl MfccTensor {
    pub fn shape(&self) -> [usize; 3] {
        [self.n_channels, self.n_frames, self.n_coeffs]
    }

    pub fn get(&self, c: usize, t: usize, k: usize) -> f64 {
        self.values[(c * self.n_frames + t) * self.n_coeffs + k]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_frames * self.n_coeffs;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Reusable extractor holding the filter bank and DCT basis for one config.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    cfg: MfccConfig,
    bank: FilterBank,
    window: Vec<f64>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let bank = FilterBank::new(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max)?;
        Ok(MfccExtractor {
            window: hamming(cfg.frame_len),
            cfg,
            bank,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn filter_bank(&self) -> &FilterBank {
        &self.bank
    }

    /// Log-mel matrix (`n_frames x n_mels`, row-major) of one channel.
    pub fn log_mel(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let cfg = &self.cfg;
        let n_frames = cfg.n_frames(x.len());
        if n_frames == 0 {
            return Err(Error::SequenceTooShort {
                len: x.len(),
                frame_len: cfg.frame_len,
            });
        }
        let mut out = vec![0.0; n_frames * cfg.n_mels];
        let mut frame = vec![0.0; cfg.frame_len];
        for (t, row) in out.chunks_exact_mut(cfg.n_mels).enumerate() {
            let start = t * cfg.hop;
            for ((f, s), w) in frame.iter_mut().zip(&x[start..start + cfg.frame_len]).zip(&self.window) {
                *f = s * w;
            }
            let power = power_spectrum(&frame, cfg.n_fft);
            self.bank.apply_into(&power, row);
            for v in row.iter_mut() {
                *v = (*v + cfg.eps).ln();
            }
        }
        Ok((n_frames, out))
    }

    /// MFCCs of one channel as an `n_frames x n_mfcc` row-major matrix.
    pub fn channel_mfcc(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let (n_frames, logmel) = self.log_mel(x)?;
        let (n_mels, n_mfcc) = (self.cfg.n_mels, self.cfg.n_mfcc);
        let mut out = vec![0.0; n_frames * n_mfcc];
        match self.cfg.dct_axis {
            DctAxis::Temporal => {
                let dct = Dct2::new(n_frames);
                let mut column = vec![0.0; n_frames];
                let mut coeffs = vec![0.0; n_frames];
                for j in 0..n_mfcc {
                    for (t, c) in column.iter_mut().enumerate() {
                        *c = logmel[t * n_mels + j];
                    }
                    dct.apply_into(&column, &mut coeffs);
                    for (t, c) in coeffs.iter().enumerate() {
                        out[t * n_mfcc + j] = *c;
                    }
                }
            }
            DctAxis::Mel => {
                let dct = Dct2::new(n_mels);
                for (row, dst) in logmel.chunks_exact(n_mels).zip(out.chunks_exact_mut(n_mfcc)) {
                    dct.apply_into(row, dst);
                }
            }
        }
        Ok((n_frames, out))
    }

    /// Apply the chain to each of the five channels independently.
    pub fn extract(&self, win: &SequenceWindow) -> Result<MfccTensor> {
        let mut values = Vec::new();
        let mut n_frames = 0;
        for c in 0..NUM_CHANNELS {
            let (nf, m) = self.channel_mfcc(&win.channel(c))?;
            n_frames = nf;
            values.extend(m);
        }
        Ok(MfccTensor {
            values,
            n_channels: NUM_CHANNELS,
            n_frames,
            n_coeffs: self.cfg.n_mfcc,
        })
    }
}

/// One-shot MFCC extraction for a window.
pub fn mfcc(win: &SequenceWindow, cfg: &MfccConfig) -> Result<MfccTensor> {
    MfccExtractor::new(*cfg)?.extract(win)
}

const MFC1_MAGIC: &[u8; 4] = b"MFC1";

/// Write a tensor as `MFC1`: magic, three little-endian `u32` dims, then
/// little-endian `f32` values in C order.
pub fn write_mfc1<W: Write>(mut w: W, t: &MfccTensor) -> std::io::Result<()> {
    w.write_all(MFC1_MAGIC)?;
    for d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &t.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_mfc1<R: Read>(mut r: R) -> Result<MfccTensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Format(format!("reading MFC1: {e}")))?;
    if buf.len() < 16 || &buf[..4] != MFC1_MAGIC {
        return Err(Error::Format("missing MFC1 header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, f, k) = (dim(0), dim(1), dim(2));
    let body = &buf[16..];
    if body.len() != c * f * k * 4 {
        return Err(Error::Format(format!(
            "MFC1 body has {} bytes, dims {c}x{f}x{k} need {}",
            body.len(),
            c * f * k * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(MfccTensor {
        values,
        n_channels: c,
        n_frames: f,
        n_coeffs: k,
    })
}

/// Dump a tensor to `path` plus a `path.txt` sidecar echoing the config.
pub fn dump_mfc1(path: &Path, t: &MfccTensor, cfg: &MfccConfig) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_mfc1(std::io::BufWriter::new(file), t).map_err(|e| Error::io(path, e))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    let text = format!(
        "shape = [{}, {}, {}]\nframe_len = {}\nhop = {}\nn_fft = {}\nn_mels = {}\nn_mfcc = {}\nf_min = {}\nf_max = {}\nsample_rate = {}\neps = {:e}\ndct_axis = {}\n",
        t.n_channels,
        t.n_frames,
        t.n_coeffs,
        cfg.frame_len,
        cfg.hop,
        cfg.n_fft,
        cfg.n_mels,
        cfg.n_mfcc,
        cfg.f_min,
        cfg.f_max,
        cfg.sample_rate,
        cfg.eps,
        match cfg.dct_axis {
            DctAxis::Temporal => "temporal",
            DctAxis::Mel => "mel",
        }
    );
    std::fs::write(&sidecar, text).map_err(|e| Error::io(std::path::PathBuf::from(sidecar), e))
}
