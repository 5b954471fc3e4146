//! Minibatch training with early stopping, shared by every network.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_batch, Network, TensorDataset};
use crate::error::{Error, Result};
use crate::nn::{clip_gradients, AdamW, AdamWParams, CosineRestartSchedule, FocalLossParams, LossKind, NTensor, Tape};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub optimizer: AdamWParams,
    /// Stepped once per epoch; `None` keeps the rate constant. Absent in
    /// a serialized config means `None`.
    #[serde(default)]
    pub schedule: Option<CosineRestartSchedule>,
    pub loss: LossKind,
    /// Global gradient-norm ceiling; `None` disables clipping.
    #[serde(default)]
    pub clip_max_norm: Option<f64>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    /// The multi-branch recipe.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 150,
            early_stop_patience: 30,
            optimizer: AdamWParams::default(),
            schedule: Some(CosineRestartSchedule::default()),
            loss: FocalLossParams::default().into(),
            clip_max_norm: Some(1.0),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// The fully connected baseline's recipe: Adam, cross-entropy, constant
    /// rate, 200 epochs, patience 20.
    pub fn simple_nn() -> Self {
        TrainConfig {
            max_epochs: 200,
            early_stop_patience: 20,
            optimizer: AdamWParams::adam(1e-3),
            schedule: None,
            loss: LossKind::CrossEntropy,
            clip_max_norm: None,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train: {m}")));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.early_stop_patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            ));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.weight_decay >= 0.0) {
            return bad("optimizer needs lr > 0, betas in [0, 1), weight_decay >= 0".into());
        }
        if let Some(s) = self.schedule {
            if s.t0 == 0 || s.t_mult == 0 {
                return bad("schedule needs t0 >= 1 and t_mult >= 1".into());
            }
        }
        if let LossKind::Focal { alpha, gamma } = self.loss {
            if !(alpha > 0.0 && gamma >= 0.0) {
                return bad("focal loss needs alpha > 0 and gamma >= 0".into());
            }
        }
        if self.clip_max_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_max_norm must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Some(s) => s.lr_at(self.optimizer.lr, epoch as f64),
            None => self.optimizer.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            let num = |j: usize| -> Result<f64> {
                cells
                    .get(j)
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| Error::MalformedRow {
                        row: i + 1,
                        cell: cells.get(j).unwrap_or(&"").to_string(),
                    })
            };
            epochs.push(EpochRecord {
                epoch: num(0)? as usize,
                lr: num(1)?,
                train_loss: num(2)?,
                train_acc: num(3)?,
                val_loss: num(4)?,
                val_acc: num(5)?,
            });
        }
        Ok(History { epochs })
    }
}

/// Patience counter over validation results.
///
/// An epoch improves when validation accuracy rises, or stays equal with a
/// lower loss. Every non-improving epoch bumps the counter; training stops on
/// a non-improving epoch once the counter reaches the patience. Patience 0
/// and 1 therefore both stop at the first non-improving epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_acc: f64,
    pub best_loss: f64,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_acc: f64::NEG_INFINITY,
            best_loss: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn is_improvement(&self, acc: f64, loss: f64) -> bool {
        acc > self.best_acc || (acc == self.best_acc && loss < self.best_loss)
    }

    /// Record an epoch. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, acc: f64, loss: f64) -> (bool, bool) {
        if self.is_improvement(acc, loss) {
            self.best_acc = acc;
            self.best_loss = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean loss and accuracy of `net` in evaluation mode.
pub fn evaluate(net: &dyn Network, data: &TensorDataset, loss: LossKind, chunk: usize) -> Result<(f64, f64)> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let (mut total_loss, mut correct) = (0.0, 0usize);
    for part in rows.chunks(chunk.max(1)) {
        let batch = data.subset(part);
        let mut tape = Tape::eval();
        let logits = net.forward(&mut tape, &batch.inputs)?;
        let l = loss.apply(&mut tape, logits, &batch.labels)?;
        total_loss += tape.value(l).data()[0] * part.len() as f64;
        correct += count_correct(tape.value(logits), &batch.labels);
    }
    let n = data.len().max(1) as f64;
    Ok((total_loss / n, correct as f64 / n))
}

fn count_correct(logits: &NTensor, labels: &[usize]) -> usize {
    super::argmax_rows(logits.data())
        .iter()
        .zip(labels)
        .filter(|(p, t)| p == t)
        .count()
}

/// Train `net` in place and leave it holding the best-validation parameters.
///
/// Each epoch shuffles the training set with a stream derived from
/// `cfg.rng_seed`, then for every minibatch runs forward and backward, clips
/// the global gradient norm, takes an AdamW step at the epoch's scheduled
/// rate and folds in batch-norm running statistics.
pub fn train(net: &mut dyn Network, train_set: &TensorDataset, val_set: &TensorDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    check_batch(net, &train_set.inputs)?;
    check_batch(net, &val_set.inputs)?;

    let mut opt = AdamW::new(cfg.optimizer);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best_params = net.store().named_tensors();
    let mut history = History::default();
    let mut stopped_early = false;
    let mut step: u64 = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut derived_rng(cfg.rng_seed, "shuffle", epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.subset(rows);
            let mut tape = Tape::train(derived_rng(cfg.rng_seed, "dropout", step));
            step += 1;
            let logits = net.forward(&mut tape, &batch.inputs)?;
            let loss = cfg.loss.apply(&mut tape, logits, &batch.labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                let data = tape.value(logits).data();
                let max_logit = if data.iter().any(|v| v.is_nan()) {
                    f64::NAN
                } else {
                    data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                };
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss = {value}, lr = {lr:e}, max |logit| = {max_logit:e}"),
                });
            }
            loss_sum += value * rows.len() as f64;
            correct += count_correct(tape.value(logits), &batch.labels);

            let grads = tape.backward(loss);
            let store = net.store_mut();
            store.zero_grads();
            tape.accumulate_param_grads(&grads, store);
            if let Some(max_norm) = cfg.clip_max_norm {
                clip_gradients(store.grads_mut(), max_norm);
            }
            opt.step(store, lr);
            for update in tape.take_stat_updates() {
                update.apply(store);
            }
        }
        let (val_loss, val_acc) = evaluate(net, val_set, cfg.loss, 256)?;
        let n = train_set.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
        let (improved, stop) = stopper.observe(epoch, val_acc, val_loss);
        if improved {
            best_params = net.store().named_tensors();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    net.store_mut().load_named(&best_params)?;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch.expect("at least one epoch ran"),
        best_val_acc: stopper.best_acc,
        best_val_loss: stopper.best_loss,
        stopped_early,
    })
}
