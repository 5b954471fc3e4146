//! The five-branch MFCC classifier, the shared training loop and checkpoints.

pub mod checkpoint;
pub mod multibranch;
pub mod train;

pub use checkpoint::{Checkpoint, ModelKind, Predictor};
pub use multibranch::{BranchTaps, MultiBranchNet};
pub use train::{train, EarlyStopping, EpochRecord, History, TrainConfig, TrainOutcome};

use std::path::Path;

use crate::container::{fingerprint, Container, MAGIC_FEATURES};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, NTensor, ParamStore, Tape, Var};

/// A classifier whose parameters live in a [`ParamStore`].
pub trait Network {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Shape of one sample, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;
    /// Logits `[B, 11]` for a batch `[B, sample_shape...]`.
    fn forward(&self, tape: &mut Tape, batch: &NTensor) -> Result<Var>;
    /// Canonical layer description; its hash fingerprints checkpoints.
    fn architecture(&self) -> String;
}

/// Labeled samples stacked along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    pub inputs: NTensor,
    pub labels: Vec<usize>,
}

impl TensorDataset {
    pub fn new(inputs: NTensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() == 0 || inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::ShapeMismatch(format!("label index {bad} out of range")));
        }
        Ok(TensorDataset { inputs, labels })
    }

    /// Stack equally shaped samples.
    pub fn from_samples(samples: &[Vec<f64>], sample_shape: &[usize], labels: Vec<usize>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if samples.iter().any(|s| s.len() != per) {
            return Err(Error::ShapeMismatch(format!("every sample must hold {per} values")));
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        let data = samples.iter().flatten().copied().collect();
        TensorDataset::new(NTensor::new(shape, data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, rows: &[usize]) -> TensorDataset {
        TensorDataset {
            inputs: self.inputs.slice_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Pack into a `GSF1` container with `info` as metadata.
    pub fn to_container(&self, info: serde_json::Value) -> Container {
        let mut c = Container::new(MAGIC_FEATURES, fingerprint(&format!("features;shape={:?}", self.sample_shape())));
        c.push("inputs", self.inputs.clone());
        let labels = self.labels.iter().map(|&l| l as f64).collect();
        c.push("labels", NTensor::new(vec![self.len()], labels).expect("label vector"));
        c.metadata = info;
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let labels = c.tensor("labels")?.data().iter().map(|&l| l as usize).collect();
        TensorDataset::new(c.tensor("inputs")?.clone(), labels)
    }

    pub fn save(&self, path: &Path, info: serde_json::Value) -> Result<()> {
        self.to_container(info).save(path)
    }

    /// Load a feature set and the metadata stored with it.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let c = Container::load(path, MAGIC_FEATURES)?;
        Ok((TensorDataset::from_container(&c)?, c.metadata))
    }
}

pub(crate) fn check_batch(net: &dyn Network, batch: &NTensor) -> Result<usize> {
    let expect = net.sample_shape();
    if batch.rank() != expect.len() + 1 || batch.shape()[1..] != expect[..] {
        return Err(Error::ShapeMismatch(format!(
            "expected batch [B, {expect:?}], got {:?}",
            batch.shape()
        )));
    }
    Ok(batch.shape()[0])
}

/// Evaluation-mode class probabilities, `[B * 11]` row-major.
pub fn predict_proba(net: &dyn Network, batch: &NTensor) -> Result<Vec<f64>> {
    let mut tape = Tape::eval();
    let logits = net.forward(&mut tape, batch)?;
    Ok(softmax_rows(tape.value(logits).data(), NUM_CLASSES))
}

/// Argmax class index per row of a probability matrix; ties go to the lower
/// index.
pub fn argmax_rows(probs: &[f64]) -> Vec<usize> {
    probs
        .chunks_exact(NUM_CLASSES)
        .map(|row| row.iter().enumerate().fold(0, |b, (i, &p)| if p > row[b] { i } else { b }))
        .collect()
}

/// Predicted class indices for a whole dataset, in chunks of `chunk` rows.
pub fn predict_dataset(net: &dyn Network, data: &TensorDataset, chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let rows: Vec<usize> = (0..data.len()).collect();
    for part in rows.chunks(chunk.max(1)) {
        out.extend(argmax_rows(&predict_proba(net, &data.inputs.slice_rows(part))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_round_trip() {
        let samples: Vec<Vec<f64>> = (0..4).map(|i| (0..6).map(|j| (i * 6 + j) as f64 / 7.0).collect()).collect();
        let ds = TensorDataset::from_samples(&samples, &[2, 3], vec![0, 10, 3, 3]).unwrap();
        let c = ds.to_container(serde_json::json!({"split": "test"}));
        let back = Container::from_bytes(&c.to_bytes(), MAGIC_FEATURES).unwrap();
        assert_eq!(TensorDataset::from_container(&back).unwrap(), ds);
        assert_eq!(back.metadata["split"], "test");
    }
}
