//! Loss configuration and plain (tape-free) reference evaluations.

use serde::{Deserialize, Serialize};

use super::tape::{softmax_rows, LOG_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams {
            alpha: 1.0,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Focal { alpha: f64, gamma: f64 },
    CrossEntropy,
}

impl From<FocalLossParams> for LossKind {
    fn from(p: FocalLossParams) -> Self {
        LossKind::Focal {
            alpha: p.alpha,
            gamma: p.gamma,
        }
    }
}

/// Row-wise softmax of a flat `[B, k]` buffer.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    softmax_rows(logits, k)
}

/// Focal loss for one sample given its true-class probability.
pub fn focal_from_prob(p_t: f64, alpha: f64, gamma: f64) -> f64 {
    let p = if p_t < LOG_CLAMP { LOG_CLAMP } else { p_t };
    -alpha * (1.0 - p_t).powf(gamma) * p.ln()
}

impl LossKind {
    /// Record this loss on `tape` and return the scalar node.
    pub fn apply(&self, tape: &mut super::Tape, logits: super::Var, targets: &[usize]) -> crate::Result<super::Var> {
        match *self {
            LossKind::Focal { alpha, gamma } => tape.focal_loss(logits, targets, alpha, gamma),
            LossKind::CrossEntropy => tape.cross_entropy(logits, targets),
        }
    }
}
