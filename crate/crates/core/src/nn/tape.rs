//! Define-by-run tape. Each op records its output value and whatever its
//! backward pass needs; [`Tape::backward`] walks the nodes in reverse.

use rand::Rng as _;

use super::gemm::gemm;
use super::params::{BufferId, ParamId, ParamStore};
use super::tensor::NTensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    WeightedSum(Var, Vec<f64>),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
        col: Vec<f64>,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanPool1d(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat(Vec<Var>),
    Softmax(Var),
    FocalLoss {
        logits: Var,
        targets: Vec<usize>,
        alpha: f64,
        gamma: f64,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: NTensor,
    op: Op,
}

/// Pending batch-norm running-statistic update from a training forward pass.
#[derive(Debug, Clone)]
pub struct RunningStatUpdate {
    pub mean_buf: BufferId,
    pub var_buf: BufferId,
    pub momentum: f64,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl RunningStatUpdate {
    /// `running = (1 - momentum) running + momentum batch`.
    pub fn apply(&self, store: &mut ParamStore) {
        let m = self.momentum;
        for (r, b) in store.buffer_mut(self.mean_buf).data_mut().iter_mut().zip(&self.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in store.buffer_mut(self.var_buf).data_mut().iter_mut().zip(&self.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Gradients for every node of a tape after [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the seeded output with respect to `v`, if it was reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
    rng: Option<Rng>,
    stat_updates: Vec<RunningStatUpdate>,
}

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for (o, z) in out.iter_mut().zip(row) {
        *o = z - lse;
    }
}

/// Floor for `p_t` inside the focal loss log.
pub const LOG_CLAMP: f64 = 1e-12;

impl Tape {
    /// Evaluation tape: batch norm uses running statistics, dropout is off.
    pub fn eval() -> Self {
        Tape {
            nodes: Vec::new(),
            training: false,
            rng: None,
            stat_updates: Vec::new(),
        }
    }

    /// Training tape; `rng` drives dropout masks.
    pub fn train(rng: Rng) -> Self {
        Tape {
            nodes: Vec::new(),
            training: true,
            rng: Some(rng),
            stat_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hand the dropout RNG back (training tapes only).
    pub fn into_rng(self) -> Option<Rng> {
        self.rng
    }

    pub fn take_stat_updates(&mut self) -> Vec<RunningStatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, value: NTensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &NTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, t: NTensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = NTensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = NTensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = NTensor::new(v.shape().to_vec(), v.data().iter().map(|z| if *z < 0.0 { 0.0 } else { *z }).collect())
            .expect("same shape");
        self.push(t, Op::Relu(x))
    }

    /// Scalar `sum_i x_i c_i` for a constant vector `c`.
    pub fn weighted_sum(&mut self, x: Var, coeffs: Vec<f64>) -> Result<Var> {
        if coeffs.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum: coefficient count".into()));
        }
        let s = self.value(x).data().iter().zip(&coeffs).map(|(a, b)| a * b).sum();
        Ok(self.push(NTensor::filled(&[1], s), Op::WeightedSum(x, coeffs)))
    }

    /// `y = x W^T + b` with `x: [B, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs != [ws[0]] || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; batch * fan_out];
        for row in out.chunks_exact_mut(fan_out) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            batch,
            fan_in,
            fan_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            1.0,
        );
        let t = NTensor::new(vec![batch, fan_out], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Stride-1 cross-correlation with `pad` zeros on both ends.
    /// `x: [B, Cin, L]`, `w: [Cout, Cin, K]`, `b: [Cout]` gives
    /// `[B, Cout, L + 2 pad - K + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || bs != [ws[0]] || ws[2] > xs[2] + 2 * pad {
            return Err(shape_err(format!("conv1d: x {xs:?}, w {ws:?}, b {bs:?}, pad {pad}")));
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let lout = len + 2 * pad - k + 1;
        let cols = batch * lout;
        let xv = self.value(x).data();
        let mut col = vec![0.0; cin * k * cols];
        for ci in 0..cin {
            for kk in 0..k {
                let dst = &mut col[(ci * k + kk) * cols..(ci * k + kk + 1) * cols];
                for bi in 0..batch {
                    let src = &xv[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                    for t in 0..lout {
                        let pos = t + kk;
                        if pos >= pad && pos - pad < len {
                            dst[bi * lout + t] = src[pos - pad];
                        }
                    }
                }
            }
        }
        let mut mat = vec![0.0; cout * cols];
        gemm(cout, cin * k, cols, self.value(w).data(), false, &col, false, &mut mat, 0.0);
        let bias = self.value(b).data();
        let mut out = vec![0.0; batch * cout * lout];
        for co in 0..cout {
            for bi in 0..batch {
                let src = &mat[co * cols + bi * lout..co * cols + (bi + 1) * lout];
                let dst = &mut out[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[co];
                }
            }
        }
        let t = NTensor::new(vec![batch, cout, lout], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, pad, col }))
    }

    /// Non-overlapping max pool of width 2 over the last axis of
    /// `[B, C, L]`; a trailing odd element is dropped.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[2] < 2 {
            return Err(shape_err(format!("maxpool1d: input {xs:?}")));
        }
        let (rows, len) = (xs[0] * xs[1], xs[2]);
        let lout = len / 2;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * lout);
        let mut argmax = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            for t in 0..lout {
                let i = r * len + 2 * t;
                let j = if xv[i + 1] > xv[i] { i + 1 } else { i };
                out.push(xv[j]);
                argmax.push(j);
            }
        }
        let t = NTensor::new(vec![xs[0], xs[1], lout], out)?;
        Ok(self.push(t, Op::MaxPool1d { x, argmax }))
    }

    /// Mean over the last axis: `[B, C, L] -> [B, C]` (adaptive average
    /// pooling to length 1, flattened).
    pub fn mean_pool1d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[2] == 0 {
            return Err(shape_err(format!("mean_pool1d: input {xs:?}")));
        }
        let (b, c, len) = (xs[0], xs[1], xs[2]);
        let out = self
            .value(x)
            .data()
            .chunks_exact(len)
            .map(|r| r.iter().sum::<f64>() / len as f64)
            .collect();
        let t = NTensor::new(vec![b, c], out)?;
        Ok(self.push(t, Op::MeanPool1d(x)))
    }

    /// Batch normalization over `[B, C]` or `[B, C, L]` (statistics per
    /// channel over batch and length).
    ///
    /// Training tapes normalize with batch statistics and queue a running-stat
    /// update; evaluation tapes use the running buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&NTensor, &NTensor),
        bufs: (BufferId, BufferId),
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if !(xs.len() == 2 || xs.len() == 3) || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(format!("batch_norm: input {xs:?}")));
        }
        let (b, c) = (xs[0], xs[1]);
        let len = if xs.len() == 3 { xs[2] } else { 1 };
        let xv = self.nodes[x.0].value.data();
        let idx = |bi: usize, ci: usize, t: usize| (bi * c + ci) * len + t;
        let (mean, var) = if self.training {
            let m = (b * len) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    for t in 0..len {
                        s += xv[idx(bi, ci, t)];
                    }
                }
                mean[ci] = s / m;
                let mut q = 0.0;
                for bi in 0..b {
                    for t in 0..len {
                        let d = xv[idx(bi, ci, t)] - mean[ci];
                        q += d * d;
                    }
                }
                var[ci] = q / m;
            }
            let unbiased = var
                .iter()
                .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
                .collect();
            self.stat_updates.push(RunningStatUpdate {
                mean_buf: bufs.0,
                var_buf: bufs.1,
                momentum,
                batch_mean: mean.clone(),
                batch_var: unbiased,
            });
            (mean, var)
        } else {
            (running.0.data().to_vec(), running.1.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.nodes[gamma.0].value.data(), self.nodes[beta.0].value.data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..len {
                    let i = idx(bi, ci, t);
                    xhat[i] = (xv[i] - mean[ci]) * inv_std[ci];
                    out[i] = g[ci] * xhat[i] + bt[ci];
                }
            }
        }
        let t = NTensor::new(xs, out)?;
        let batch_stats = self.training;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Layer normalization over the last axis of `[B, F]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(format!("layer_norm: input {xs:?}")));
        }
        let f = xs[1];
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xs[0] * f];
        let mut inv_std = vec![0.0; xs[0]];
        let mut out = vec![0.0; xs[0] * f];
        for (r, row) in self.value(x).data().chunks_exact(f).enumerate() {
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..f {
                let xh = (row[j] - mean) * is;
                xhat[r * f + j] = xh;
                out[r * f + j] = g[j] * xh + bt[j];
            }
        }
        let t = NTensor::new(xs, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1 / (1 - p)`. Identity on evaluation tapes.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let rng = self.rng.as_mut().expect("training tapes carry an rng");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = NTensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Dropout { x, mask })
    }

    /// Concatenate `[B, F_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let b = self.shape(parts[0])[0];
        if parts.iter().any(|&p| self.shape(p).len() != 2 || self.shape(p)[0] != b) {
            return Err(shape_err("concat: inputs must be [B, F] with equal B".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(b * total);
        for r in 0..b {
            for &p in parts {
                let f = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[r * f..(r + 1) * f]);
            }
        }
        let t = NTensor::new(vec![b, total], out)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Row-wise softmax of `[B, K]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(shape_err(format!("softmax: input {xs:?}")));
        }
        let probs = softmax_rows(self.value(x).data(), xs[1]);
        Ok(self.push(NTensor::new(xs, probs)?, Op::Softmax(x)))
    }

    fn check_targets(&self, logits: Var, targets: &[usize]) -> Result<(usize, usize)> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
            return Err(shape_err(format!(
                "loss: logits {s:?} with {} targets",
                targets.len()
            )));
        }
        Ok((s[0], s[1]))
    }

    /// Batch mean of `-alpha (1 - p_t)^gamma ln p_t`, `p_t` floored at
    /// [`LOG_CLAMP`] inside the log.
    pub fn focal_loss(&mut self, logits: Var, targets: &[usize], alpha: f64, gamma: f64) -> Result<Var> {
        let (b, k) = self.check_targets(logits, targets)?;
        let mut logp = vec![0.0; b * k];
        for (row, out) in self.value(logits).data().chunks_exact(k).zip(logp.chunks_exact_mut(k)) {
            log_softmax_row(row, out);
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            // Comparisons instead of `max`, which would swallow a NaN.
            let lp = logp[r * k + t];
            let lp = if lp < LOG_CLAMP.ln() { LOG_CLAMP.ln() } else { lp };
            let p = logp[r * k + t].exp();
            total += -alpha * focal_weight(1.0 - p, gamma) * lp;
        }
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(
            NTensor::filled(&[1], total / b as f64),
            Op::FocalLoss {
                logits,
                targets: targets.to_vec(),
                alpha,
                gamma,
                probs,
            },
        ))
    }

    /// Batch mean of `-ln softmax(z)_t`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = self.check_targets(logits, targets)?;
        let mut logp = vec![0.0; b * k];
        for (row, out) in self.value(logits).data().chunks_exact(k).zip(logp.chunks_exact_mut(k)) {
            log_softmax_row(row, out);
        }
        let total: f64 = targets.iter().enumerate().map(|(r, &t)| -logp[r * k + t]).sum();
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(
            NTensor::filled(&[1], total / b as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    /// Add parameter-node gradients into the store.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g);
            }
        }
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Relu(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::WeightedSum(x, c) => {
                let gx: Vec<f64> = c.iter().map(|ci| ci * g[0]).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Linear { x, w, b } => {
                let (batch, fan_in) = (shape(*x)[0], shape(*x)[1]);
                let fan_out = shape(*w)[0];
                let mut gw = vec![0.0; fan_out * fan_in];
                gemm(fan_out, batch, fan_in, g, true, val(*x), false, &mut gw, 0.0);
                let mut gb = vec![0.0; fan_out];
                for row in g.chunks_exact(fan_out) {
                    for (a, r) in gb.iter_mut().zip(row) {
                        *a += r;
                    }
                }
                let mut gx = vec![0.0; batch * fan_in];
                gemm(batch, fan_out, fan_in, g, false, val(*w), false, &mut gx, 0.0);
                accumulate(grads, *w, &gw);
                accumulate(grads, *b, &gb);
                accumulate(grads, *x, &gx);
            }
            Op::Conv1d { x, w, b, pad, col } => {
                let (batch, cin, len) = (shape(*x)[0], shape(*x)[1], shape(*x)[2]);
                let (cout, k) = (shape(*w)[0], shape(*w)[2]);
                let lout = len + 2 * pad - k + 1;
                let cols = batch * lout;
                let mut gm = vec![0.0; cout * cols];
                for bi in 0..batch {
                    for co in 0..cout {
                        let src = &g[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                        gm[co * cols + bi * lout..co * cols + (bi + 1) * lout].copy_from_slice(src);
                    }
                }
                let mut gw = vec![0.0; cout * cin * k];
                gemm(cout, cols, cin * k, &gm, false, col, true, &mut gw, 0.0);
                let gb: Vec<f64> = gm.chunks_exact(cols).map(|r| r.iter().sum()).collect();
                let mut gcol = vec![0.0; cin * k * cols];
                gemm(cin * k, cout, cols, val(*w), true, &gm, false, &mut gcol, 0.0);
                let mut gx = vec![0.0; batch * cin * len];
                for ci in 0..cin {
                    for kk in 0..k {
                        let src = &gcol[(ci * k + kk) * cols..(ci * k + kk + 1) * cols];
                        for bi in 0..batch {
                            let dst = &mut gx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                            for t in 0..lout {
                                let pos = t + kk;
                                if pos >= *pad && pos - pad < len {
                                    dst[pos - pad] += src[bi * lout + t];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *w, &gw);
                accumulate(grads, *b, &gb);
                accumulate(grads, *x, &gx);
            }
            Op::MaxPool1d { x, argmax } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (gi, &j) in g.iter().zip(argmax) {
                    gx[j] += gi;
                }
                accumulate(grads, *x, &gx);
            }
            Op::MeanPool1d(x) => {
                let len = shape(*x)[2];
                let gx: Vec<f64> = g
                    .iter()
                    .flat_map(|gi| std::iter::repeat_n(gi / len as f64, len))
                    .collect();
                accumulate(grads, *x, &gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = shape(*x);
                let (b, c) = (xs[0], xs[1]);
                let len = if xs.len() == 3 { xs[2] } else { 1 };
                let idx = |bi: usize, ci: usize, t: usize| (bi * c + ci) * len + t;
                let gam = val(*gamma);
                let m = (b * len) as f64;
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut gx = vec![0.0; g.len()];
                for ci in 0..c {
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for bi in 0..b {
                        for t in 0..len {
                            let i = idx(bi, ci, t);
                            sum_g += g[i];
                            sum_gx += g[i] * xhat[i];
                        }
                    }
                    gg[ci] = sum_gx;
                    gbeta[ci] = sum_g;
                    let scale = gam[ci] * inv_std[ci];
                    for bi in 0..b {
                        for t in 0..len {
                            let i = idx(bi, ci, t);
                            gx[i] = if *batch_stats {
                                scale * (g[i] - sum_g / m - xhat[i] * sum_gx / m)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                accumulate(grads, *gamma, &gg);
                accumulate(grads, *beta, &gbeta);
                accumulate(grads, *x, &gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let f = shape(*x)[1];
                let gam = val(*gamma);
                let mut gg = vec![0.0; f];
                let mut gbeta = vec![0.0; f];
                let mut gx = vec![0.0; g.len()];
                for (r, grow) in g.chunks_exact(f).enumerate() {
                    let xh = &xhat[r * f..(r + 1) * f];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..f {
                        gg[j] += grow[j] * xh[j];
                        gbeta[j] += grow[j];
                        let d = grow[j] * gam[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    for j in 0..f {
                        let d = grow[j] * gam[j];
                        gx[r * f + j] =
                            inv_std[r] * (d - sum_d / f as f64 - xh[j] * sum_dx / f as f64);
                    }
                }
                accumulate(grads, *gamma, &gg);
                accumulate(grads, *beta, &gbeta);
                accumulate(grads, *x, &gx);
            }
            Op::Dropout { x, mask } => {
                let gx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Concat(parts) => {
                let total: usize = parts.iter().map(|&p| shape(p)[1]).sum();
                let b = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let f = shape(p)[1];
                    let mut gp = vec![0.0; b * f];
                    for r in 0..b {
                        gp[r * f..(r + 1) * f]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + f]);
                    }
                    offset += f;
                    accumulate(grads, p, &gp);
                }
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data();
                let k = shape(*x)[1];
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks_exact(k).zip(g.chunks_exact(k)).zip(gx.chunks_exact_mut(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::FocalLoss {
                logits,
                targets,
                alpha,
                gamma,
                probs,
            } => {
                let (b, k) = (targets.len(), shape(*logits)[1]);
                let mut gz = vec![0.0; b * k];
                for (r, &t) in targets.iter().enumerate() {
                    let p = &probs[r * k..(r + 1) * k];
                    let pt = p[t];
                    let q = 1.0 - pt;
                    let lp = pt.max(LOG_CLAMP).ln();
                    let decay = if *gamma == 0.0 || q <= 0.0 {
                        0.0
                    } else {
                        gamma * q.powf(gamma - 1.0) * pt * lp
                    };
                    let coef = alpha * (decay - focal_weight(q, *gamma)) * g[0] / b as f64;
                    for j in 0..k {
                        let delta = if j == t { 1.0 } else { 0.0 };
                        gz[r * k + j] = coef * (delta - p[j]);
                    }
                }
                accumulate(grads, *logits, &gz);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (b, k) = (targets.len(), shape(*logits)[1]);
                let mut gz: Vec<f64> = probs.iter().map(|p| p * g[0] / b as f64).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gz[r * k + t] -= g[0] / b as f64;
                }
                accumulate(grads, *logits, &gz);
            }
        }
    }
}

fn focal_weight(q: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (if q < 0.0 { 0.0 } else { q }).powf(gamma)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Numerically stable row-wise softmax of a flat `[B, k]` buffer.
pub fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, o) in data.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (oj, z) in o.iter_mut().zip(row) {
            *oj = (z - max).exp();
            s += *oj;
        }
        o.iter_mut().for_each(|v| *v /= s);
    }
    out
}
