//! Five per-finger convolutional branches fused by a dense head.
//!
//! Each branch sees one sensor's `(n_frames, n_coeffs)` MFCC block with the
//! coefficients as input channels and frames as the convolved axis:
//!
//! ```text
//! Conv1d(c→64, k3) → BN → ReLU → MaxPool(2) → Conv1d(64→128, k3) → BN → ReLU → mean over frames
//! ```
//!
//! Padding is "same" (k/2). From 22 frames the lengths run 22 → 22 → 11 → 11
//! → 1. Unpadded convolutions would also fit (22 → 20 → 10 → 8 → 1), but
//! padding keeps short windows usable.
//!
//! The five 128-d embeddings are concatenated (640) and passed through
//! `Dense 512 → LN → ReLU → Dropout 0.5 → Dense 256 → LN → ReLU → Dropout 0.4
//! → Dense 11`.

use super::Network;
use crate::data::{NUM_CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, LayerNorm, Linear, NTensor, ParamStore, Tape, Var};
use crate::rng::derived_rng;

pub const BRANCH_HIDDEN: usize = 64;
pub const BRANCH_OUT: usize = 128;
pub const KERNEL: usize = 3;
pub const FUSION: [usize; 2] = [512, 256];
pub const DROPOUT: [f64; 2] = [0.5, 0.4];
/// Shortest frame axis accepted by [`MultiBranchNet::new`].
pub const MIN_FRAMES: usize = 4;

#[derive(Debug, Clone)]
struct Branch {
    conv1: Conv1d,
    bn1: BatchNorm1d,
    conv2: Conv1d,
    bn2: BatchNorm1d,
}

impl Branch {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = self.bn1.forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = tape.maxpool1d(h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let h = self.bn2.forward(tape, store, h)?;
        let h = tape.relu(h);
        tape.mean_pool1d(h)
    }
}

#[derive(Debug, Clone)]
pub struct MultiBranchNet {
    store: ParamStore,
    branches: Vec<Branch>,
    fc1: Linear,
    ln1: LayerNorm,
    fc2: Linear,
    ln2: LayerNorm,
    head: Linear,
    n_frames: usize,
    n_coeffs: usize,
}

/// Per-branch embeddings captured during a forward pass, `[B, 128]` each.
#[derive(Debug, Clone)]
pub struct BranchTaps {
    pub embeddings: Vec<NTensor>,
}

impl MultiBranchNet {
    /// Fresh network for `(5, n_frames, n_coeffs)` inputs, initialized from
    /// `seed`.
    pub fn new(n_frames: usize, n_coeffs: usize, seed: u64) -> Result<Self> {
        if n_frames < MIN_FRAMES || n_coeffs == 0 {
            return Err(Error::ShapeMismatch(format!(
                "multi-branch input needs at least {MIN_FRAMES} frames and one coefficient, got ({n_frames}, {n_coeffs})"
            )));
        }
        let mut rng = derived_rng(seed, "init", 0);
        let mut store = ParamStore::new();
        let branches = (0..NUM_CHANNELS)
            .map(|i| Branch {
                conv1: Conv1d::new(&mut store, &format!("branch{i}.conv1"), n_coeffs, BRANCH_HIDDEN, KERNEL, &mut rng),
                bn1: BatchNorm1d::new(&mut store, &format!("branch{i}.bn1"), BRANCH_HIDDEN),
                conv2: Conv1d::new(&mut store, &format!("branch{i}.conv2"), BRANCH_HIDDEN, BRANCH_OUT, KERNEL, &mut rng),
                bn2: BatchNorm1d::new(&mut store, &format!("branch{i}.bn2"), BRANCH_OUT),
            })
            .collect();
        let fused = NUM_CHANNELS * BRANCH_OUT;
        let fc1 = Linear::new(&mut store, "fusion.fc1", fused, FUSION[0], &mut rng);
        let ln1 = LayerNorm::new(&mut store, "fusion.ln1", FUSION[0]);
        let fc2 = Linear::new(&mut store, "fusion.fc2", FUSION[0], FUSION[1], &mut rng);
        let ln2 = LayerNorm::new(&mut store, "fusion.ln2", FUSION[1]);
        let head = Linear::new(&mut store, "fusion.head", FUSION[1], NUM_CLASSES, &mut rng);
        Ok(MultiBranchNet {
            store,
            branches,
            fc1,
            ln1,
            fc2,
            ln2,
            head,
            n_frames,
            n_coeffs,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Final dense layer, exposed for inspection and tests.
    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Split `[B, 5, F, C]` into five `[B, C, F]` branch inputs.
    fn branch_inputs(&self, batch: &NTensor) -> Vec<NTensor> {
        let b = batch.shape()[0];
        let (f, c) = (self.n_frames, self.n_coeffs);
        let src = batch.data();
        (0..NUM_CHANNELS)
            .map(|s| {
                let mut out = vec![0.0; b * c * f];
                for bi in 0..b {
                    let base = (bi * NUM_CHANNELS + s) * f * c;
                    for t in 0..f {
                        for k in 0..c {
                            out[(bi * c + k) * f + t] = src[base + t * c + k];
                        }
                    }
                }
                NTensor::new(vec![b, c, f], out).expect("sized above")
            })
            .collect()
    }

    /// Forward pass that also returns the pre-fusion branch embeddings.
    pub fn forward_with_taps(&self, tape: &mut Tape, batch: &NTensor) -> Result<(Var, BranchTaps)> {
        super::check_batch(self, batch)?;
        let mut embeddings = Vec::with_capacity(NUM_CHANNELS);
        for (branch, x) in self.branches.iter().zip(self.branch_inputs(batch)) {
            let x = tape.leaf(x);
            embeddings.push(branch.forward(tape, &self.store, x)?);
        }
        let taps = BranchTaps {
            embeddings: embeddings.iter().map(|&v| tape.value(v).clone()).collect(),
        };
        let h = tape.concat(&embeddings)?;
        let h = self.fc1.forward(tape, &self.store, h)?;
        let h = self.ln1.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, DROPOUT[0]);
        let h = self.fc2.forward(tape, &self.store, h)?;
        let h = self.ln2.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, DROPOUT[1]);
        let logits = self.head.forward(tape, &self.store, h)?;
        Ok((logits, taps))
    }
}

impl Network for MultiBranchNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![NUM_CHANNELS, self.n_frames, self.n_coeffs]
    }

    fn forward(&self, tape: &mut Tape, batch: &NTensor) -> Result<Var> {
        self.forward_with_taps(tape, batch).map(|(logits, _)| logits)
    }

    fn architecture(&self) -> String {
        format!(
            "multibranch;input={NUM_CHANNELS}x{}x{};branch=conv{KERNEL}({}->{BRANCH_HIDDEN}),bn,relu,maxpool2,conv{KERNEL}({BRANCH_HIDDEN}->{BRANCH_OUT}),bn,relu,avgpool;fusion={}->{}(ln,relu,drop{})->{}(ln,relu,drop{})->{NUM_CLASSES}",
            self.n_frames,
            self.n_coeffs,
            self.n_coeffs,
            NUM_CHANNELS * BRANCH_OUT,
            FUSION[0],
            DROPOUT[0],
            FUSION[1],
            DROPOUT[1],
        )
    }
}
