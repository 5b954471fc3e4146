use rand::Rng as _;

use super::params::{BufferId, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::NTensor;
use crate::error::Result;
use crate::rng::Rng;

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> NTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    NTensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Fully connected layer, weights `[out, in]`, init `U(-1/sqrt(in), 1/sqrt(in))`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: store.add(format!("{name}.weight"), uniform(&[fan_out, fan_in], bound, rng)),
            bias: store.add(format!("{name}.bias"), uniform(&[fan_out], bound, rng)),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// 1-D convolution with "same" padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Conv1d {
            weight: store.add(
                format!("{name}.weight"),
                uniform(&[out_channels, in_channels, kernel], bound, rng),
            ),
            bias: store.add(format!("{name}.bias"), uniform(&[out_channels], bound, rng)),
            in_channels,
            out_channels,
            kernel,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b, self.pad)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel + self.out_channels
    }
}

/// Batch normalization with running statistics (momentum 0.1, eps 1e-5).
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: store.add(format!("{name}.gamma"), NTensor::filled(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), NTensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), NTensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), NTensor::filled(&[channels], 1.0)),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batch_norm(
            x,
            g,
            b,
            (store.buffer(self.running_mean), store.buffer(self.running_var)),
            (self.running_mean, self.running_var),
            self.momentum,
            self.eps,
        )
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

/// Layer normalization over features (eps 1e-5).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub features: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), NTensor::filled(&[features], 1.0)),
            beta: store.add(format!("{name}.beta"), NTensor::zeros(&[features])),
            features,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }

    pub fn num_params(&self) -> usize {
        2 * self.features
    }
}
