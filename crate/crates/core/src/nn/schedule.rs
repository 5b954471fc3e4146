use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts. Cycle `i` lasts `t0 * t_mult^i`
/// epochs; within a cycle the rate decays from `lr_max` to `eta_min` along a
/// half cosine, then jumps back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CosineRestartSchedule {
    pub t0: usize,
    pub t_mult: usize,
    pub eta_min: f64,
}

impl Default for CosineRestartSchedule {
    fn default() -> Self {
        CosineRestartSchedule {
            t0: 10,
            t_mult: 2,
            eta_min: 0.0,
        }
    }
}

impl CosineRestartSchedule {
    /// Start epoch and length of the cycle containing `epoch`.
    pub fn cycle(&self, epoch: f64) -> (f64, f64) {
        let mut start = 0.0;
        let mut len = self.t0.max(1) as f64;
        while epoch >= start + len {
            start += len;
            len *= self.t_mult.max(1) as f64;
        }
        (start, len)
    }

    pub fn lr_at(&self, lr_max: f64, epoch: f64) -> f64 {
        let (start, len) = self.cycle(epoch.max(0.0));
        self.eta_min + (lr_max - self.eta_min) * (1.0 + (PI * (epoch - start) / len).cos()) / 2.0
    }
}
