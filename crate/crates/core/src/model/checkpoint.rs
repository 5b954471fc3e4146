//! Checkpoint files (`GSC1` containers) and the evaluation-mode predictor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_batch, predict_proba, MultiBranchNet, Network};
use crate::baselines::{SimpleNn, SimpleNnSpec};
use crate::container::{fingerprint, Container, MAGIC_CHECKPOINT};
use crate::data::{ClassLabel, NUM_CLASSES};
use crate::dsp::mfcc::MfccTensor;
use crate::error::{Error, Result};
use crate::nn::NTensor;

/// Enough to rebuild an untrained network of the right shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    Multibranch { n_frames: usize, n_coeffs: usize },
    SimpleNn { spec: SimpleNnSpec },
}

impl ModelKind {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Network + Send + Sync>> {
        Ok(match self {
            ModelKind::Multibranch { n_frames, n_coeffs } => Box::new(MultiBranchNet::new(*n_frames, *n_coeffs, seed)?),
            ModelKind::SimpleNn { spec } => Box::new(SimpleNn::new(spec.clone(), seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub architecture: String,
    pub epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub seed: u64,
    /// Free-form echo of the configuration that produced the weights.
    pub config: serde_json::Value,
}

impl Checkpoint {
    /// Pack `net`'s parameters and running statistics.
    pub fn to_container(&self, net: &dyn Network) -> Container {
        let mut c = Container::new(MAGIC_CHECKPOINT, fingerprint(&net.architecture()));
        for (name, t) in net.store().named_tensors() {
            c.push(name, t);
        }
        c.metadata = serde_json::to_value(self).expect("checkpoint metadata serializes");
        c
    }

    pub fn save(&self, net: &dyn Network, path: &Path) -> Result<()> {
        self.to_container(net).save(path)
    }
}

/// A loaded network locked in evaluation mode.
pub struct Predictor {
    net: Box<dyn Network + Send + Sync>,
    meta: Checkpoint,
}

impl Predictor {
    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Checkpoint = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let mut net = meta.kind.build(0)?;
        c.expect_fingerprint(&fingerprint(&net.architecture()))?;
        net.store_mut().load_named(&c.tensors)?;
        Ok(Predictor { net, meta })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MAGIC_CHECKPOINT)?)
    }

    pub fn network(&self) -> &dyn Network {
        self.net.as_ref()
    }

    pub fn meta(&self) -> &Checkpoint {
        &self.meta
    }

    /// Probabilities for a batch `[B, sample_shape...]`, row-major `[B * 11]`.
    pub fn predict_batch(&self, batch: &NTensor) -> Result<Vec<f64>> {
        check_batch(self.net.as_ref(), batch)?;
        predict_proba(self.net.as_ref(), batch)
    }

    /// Label and probabilities for one sample with the network's sample shape.
    pub fn predict(&self, sample: &[f64]) -> Result<(ClassLabel, [f64; NUM_CLASSES])> {
        let mut shape = vec![1];
        shape.extend(self.net.sample_shape());
        let probs = self.predict_batch(&NTensor::new(shape, sample.to_vec())?)?;
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&probs);
        let idx = super::argmax_rows(&probs)[0];
        Ok((ClassLabel::from_index(idx).expect("argmax in range"), out))
    }

    pub fn predict_mfcc(&self, t: &MfccTensor) -> Result<(ClassLabel, [f64; NUM_CLASSES])> {
        self.predict(&t.values)
    }
}
