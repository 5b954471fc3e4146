//! Fully connected baseline over flattened, standardized windows:
//! `5w → 128 → 64 → 32 → 11`, each hidden layer `Dense → BN → ReLU → Dropout`.

use serde::{Deserialize, Serialize};

use crate::data::{NUM_CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::nn::{BatchNorm1d, Linear, NTensor, ParamStore, Tape, Var};
use crate::rng::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleNnSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl SimpleNnSpec {
    /// The reference shape for windows of `w` timesteps.
    pub fn for_window(w: usize) -> Self {
        SimpleNnSpec {
            input_dim: NUM_CHANNELS * w,
            hidden: vec![128, 64, 32],
            dropout: vec![0.5, 0.3, 0.2],
        }
    }
}

#[derive(Debug, Clone)]
struct Hidden {
    dense: Linear,
    bn: BatchNorm1d,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct SimpleNn {
    spec: SimpleNnSpec,
    store: ParamStore,
    hidden: Vec<Hidden>,
    head: Linear,
}

impl SimpleNn {
    pub fn new(spec: SimpleNnSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden.len() != spec.dropout.len() || spec.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "SimpleNN needs a positive input size and one dropout rate per hidden layer".into(),
            ));
        }
        if spec.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidConfig("dropout rates must lie in [0, 1)".into()));
        }
        let mut rng = derived_rng(seed, "init", 0);
        let mut store = ParamStore::new();
        let mut fan_in = spec.input_dim;
        let mut hidden = Vec::new();
        for (i, (&width, &p)) in spec.hidden.iter().zip(&spec.dropout).enumerate() {
            hidden.push(Hidden {
                dense: Linear::new(&mut store, &format!("fc{i}"), fan_in, width, &mut rng),
                bn: BatchNorm1d::new(&mut store, &format!("bn{i}"), width),
                dropout: p,
            });
            fan_in = width;
        }
        let head = Linear::new(&mut store, "head", fan_in, NUM_CLASSES, &mut rng);
        Ok(SimpleNn {
            spec,
            store,
            hidden,
            head,
        })
    }

    pub fn spec(&self) -> &SimpleNnSpec {
        &self.spec
    }
}

impl Network for SimpleNn {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.spec.input_dim]
    }

    fn forward(&self, tape: &mut Tape, batch: &NTensor) -> Result<Var> {
        crate::model::check_batch(self, batch)?;
        let mut h = tape.leaf(batch.clone());
        for layer in &self.hidden {
            h = layer.dense.forward(tape, &self.store, h)?;
            h = layer.bn.forward(tape, &self.store, h)?;
            h = tape.relu(h);
            h = tape.dropout(h, layer.dropout);
        }
        self.head.forward(tape, &self.store, h)
    }

    fn architecture(&self) -> String {
        let dims: Vec<String> = self.spec.hidden.iter().map(usize::to_string).collect();
        let drops: Vec<String> = self.spec.dropout.iter().map(f64::to_string).collect();
        format!(
            "simplenn;input={};hidden={}(bn,relu);dropout={};out={NUM_CLASSES}",
            self.spec.input_dim,
            dims.join("-"),
            drops.join(",")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict_proba, train, TensorDataset, TrainConfig};

    #[test]
    fn shapes_and_probabilities() {
        let net = SimpleNn::new(SimpleNnSpec::for_window(50), 1).unwrap();
        assert_eq!(net.sample_shape(), vec![250]);
        let x = NTensor::new(vec![3, 250], (0..750).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let p = predict_proba(&net, &x).unwrap();
        assert_eq!(p.len(), 33);
        for row in p.chunks(11) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn overfits_tiny_problem() {
        let spec = SimpleNnSpec {
            input_dim: 4,
            hidden: vec![16, 8],
            dropout: vec![0.0, 0.0],
        };
        let mut net = SimpleNn::new(spec, 2).unwrap();
        let samples: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s, s * 0.5 + i as f64 * 0.01, -s, i as f64 * 0.1]
            })
            .collect();
        let labels = (0..8).map(|i| i % 2).collect();
        let data = TensorDataset::from_samples(&samples, &[4], labels).unwrap();
        let cfg = TrainConfig {
            max_epochs: 200,
            early_stop_patience: 200,
            batch_size: 8,
            optimizer: crate::nn::AdamWParams::adam(1e-2),
            ..TrainConfig::simple_nn()
        };
        let out = train(&mut net, &data, &data, &cfg).unwrap();
        let last = out.history.epochs.last().unwrap();
        assert!(last.train_loss < 0.01, "train loss {}", last.train_loss);
        assert_eq!(out.best_val_acc, 1.0);
    }
}
