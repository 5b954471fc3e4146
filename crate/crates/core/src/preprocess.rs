//! Window segmentation and the two normalization strategies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{fingerprint, Container, MAGIC_WINDOWS};
use crate::data::{ClassLabel, Frame, Recording, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::NTensor;

/// Floor applied to standard deviations before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// A fixed-length, timestep-major `w x 5` slice of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub data: Vec<Frame>,
    pub label: ClassLabel,
    pub source_id: String,
}

impl SequenceWindow {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Samples of a single channel, in time order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|f| f[c]).collect()
    }

    pub fn set_channel(&mut self, c: usize, values: &[f64]) {
        for (f, &v) in self.data.iter_mut().zip(values) {
            f[c] = v;
        }
    }

    /// Timestep-major flattening: `[t0c0, t0c1, ..., t1c0, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

/// Cut a recording into `floor(N / w)` contiguous, non-overlapping windows.
///
/// The `N mod w` leftover samples are dropped from the start so the most
/// recent data is kept.
pub fn segment(rec: &Recording, w: usize) -> Vec<SequenceWindow> {
    assert!(w >= 1, "window size must be positive");
    let skip = rec.samples.len() % w;
    rec.samples[skip..]
        .chunks_exact(w)
        .map(|chunk| SequenceWindow {
            data: chunk.to_vec(),
            label: rec.label,
            source_id: rec.id.clone(),
        })
        .collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardize each channel of a window to zero mean and unit population
/// variance. Channels with std below [`STD_FLOOR`] become all zeros.
pub fn per_sequence_normalize(win: &SequenceWindow) -> SequenceWindow {
    let mut out = win.clone();
    if win.is_empty() {
        return out;
    }
    for c in 0..NUM_CHANNELS {
        let (mean, std) = mean_std(win.data.iter().map(|f| f[c]));
        for f in out.data.iter_mut() {
            f[c] = if std < STD_FLOOR {
                0.0
            } else {
                (f[c] - mean) / std
            };
        }
    }
    out
}

/// Per-feature statistics over flattened training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Column-wise standardizer for flattened windows, fit on training data only.
#[derive(Debug, Clone, Default)]
pub struct StandardScaler {
    params: Option<ScalerParams>,
}

impl StandardScaler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: ScalerParams) -> Self {
        StandardScaler {
            params: Some(params),
        }
    }

    pub fn params(&self) -> Option<&ScalerParams> {
        self.params.as_ref()
    }

    /// Fit on row vectors of equal length. Std uses the population formula and
    /// is floored at [`STD_FLOOR`].
    pub fn fit(&mut self, rows: &[Vec<f64>]) -> Result<&ScalerParams> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidConfig("cannot fit a scaler on zero rows".into()))?;
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("scaler rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(self.params.insert(ScalerParams { mean, std }))
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        let p = self.params.as_ref().ok_or(Error::NotFitted)?;
        if row.len() != p.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "scaler fitted on {} features, got {}",
                p.mean.len(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&p.mean)
            .zip(&p.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

/// Fit a scaler on flattened training windows.
pub fn fit_scaler(train: &[SequenceWindow]) -> Result<StandardScaler> {
    let rows: Vec<Vec<f64>> = train.iter().map(SequenceWindow::flatten).collect();
    let mut scaler = StandardScaler::new();
    scaler.fit(&rows)?;
    Ok(scaler)
}

/// Flatten a window and standardize it with training statistics.
pub fn apply_scaler(scaler: &StandardScaler, win: &SequenceWindow) -> Result<Vec<f64>> {
    scaler.transform(&win.flatten())
}

/// Pack equal-length windows into a `GSW1` container: `data` `[N, w, 5]`,
/// `labels` `[N]` (class indices) and the source ids in the metadata.
pub fn windows_to_container(windows: &[SequenceWindow], info: serde_json::Value) -> Result<Container> {
    let w = windows.first().map_or(0, SequenceWindow::len);
    if let Some(bad) = windows.iter().find(|x| x.len() != w) {
        return Err(Error::ShapeMismatch(format!("window of length {} in a block of {w}", bad.len())));
    }
    let mut c = Container::new(MAGIC_WINDOWS, fingerprint(&format!("windows;w={w};channels={NUM_CHANNELS}")));
    let data: Vec<f64> = windows.iter().flat_map(SequenceWindow::flatten).collect();
    let labels: Vec<f64> = windows.iter().map(|x| x.label.index() as f64).collect();
    c.push("data", NTensor::new(vec![windows.len(), w, NUM_CHANNELS], data)?);
    c.push("labels", NTensor::new(vec![windows.len()], labels)?);
    let ids: Vec<&str> = windows.iter().map(|x| x.source_id.as_str()).collect();
    c.metadata = serde_json::json!({ "window": w, "source_ids": ids, "info": info });
    Ok(c)
}

/// Inverse of [`windows_to_container`]; returns the windows and the `info`
/// value stored with them.
pub fn windows_from_container(c: &Container) -> Result<(Vec<SequenceWindow>, serde_json::Value)> {
    let data = c.tensor("data")?;
    let labels = c.tensor("labels")?;
    let [n, w, ch] = data.shape() else {
        return Err(Error::Format("window data must be rank 3".into()));
    };
    if *ch != NUM_CHANNELS || labels.shape() != [*n] {
        return Err(Error::Format("window block tensors disagree".into()));
    }
    let ids = c.metadata.get("source_ids").and_then(|v| v.as_array());
    let stride = w * ch;
    let mut out = Vec::with_capacity(*n);
    for (i, &l) in labels.data().iter().enumerate() {
        let label = ClassLabel::from_index(l as usize).ok_or_else(|| Error::UnknownLabel(l.to_string()))?;
        let frames = data.data()[i * stride..(i + 1) * stride]
            .chunks_exact(NUM_CHANNELS)
            .map(|f| f.try_into().expect("five channels"))
            .collect();
        let source_id = ids
            .and_then(|a| a.get(i))
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        out.push(SequenceWindow {
            data: frames,
            label,
            source_id,
        });
    }
    let info = c.metadata.get("info").cloned().unwrap_or(serde_json::Value::Null);
    Ok((out, info))
}

pub fn save_windows(path: &Path, windows: &[SequenceWindow], info: serde_json::Value) -> Result<()> {
    windows_to_container(windows, info)?.save(path)
}

pub fn load_windows(path: &Path) -> Result<(Vec<SequenceWindow>, serde_json::Value)> {
    windows_from_container(&Container::load(path, MAGIC_WINDOWS)?)
}
