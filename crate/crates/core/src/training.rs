//! Asymmetric Safety Loss, AdamW, one-cycle learning rate and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSet;
use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::model::{backward_accumulate, forward_raw, init_params, ModelConfig, ModelParams};
use crate::NUM_MCS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Masked squared error with overshoot residuals weighted by `lambda`.
    Asl,
    /// Plain masked squared error.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Initial learning rate is `peak_lr / div_start`.
    pub div_start: f64,
    /// Final learning rate is `peak_lr / div_final`.
    pub div_final: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Asl,
            lambda: 1.4,
            batch_size: 512,
            epochs: 10,
            peak_lr: 1e-3,
            warmup_fraction: 0.30,
            weight_decay: 1e-2,
            div_start: 25.0,
            div_final: 1e4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 1, got {}",
                self.lambda
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.peak_lr > 0.0 && self.div_start >= 1.0 && self.div_final >= 1.0) {
            return Err(Error::InvalidArgument(
                "invalid learning-rate schedule".into(),
            ));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn effective_lambda(&self) -> f64 {
        match self.loss_kind {
            LossKind::Asl => self.lambda,
            LossKind::Mse => 1.0,
        }
    }
}

/// Per-sample loss value and its gradient with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: [f64; NUM_MCS],
}

/// Mean over valid entries of `w · (pred − P)²`, `w = lambda` on overshoot.
///
/// Returns `None` when no entry is valid; such samples are skipped.
pub fn loss_asl(pred: &[f64], label: &LabelVector, lambda: f64) -> Option<LossValue> {
    let n = label.num_valid();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; NUM_MCS];
    for k in 0..NUM_MCS {
        if !label.valid[k] {
            continue;
        }
        let r = pred[k] - label.prob[k];
        let w = if r > 0.0 { lambda } else { 1.0 };
        loss += w * r * r;
        grad[k] = 2.0 * w * r / n;
    }
    Some(LossValue {
        loss: loss / n,
        grad,
    })
}

/// Masked mean squared error.
pub fn loss_mse(pred: &[f64], label: &LabelVector) -> Option<LossValue> {
    let n = label.num_valid();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; NUM_MCS];
    for k in (0..NUM_MCS).filter(|&k| label.valid[k]) {
        let r = pred[k] - label.prob[k];
        loss += r * r;
        grad[k] = 2.0 * r / n;
    }
    Some(LossValue {
        loss: loss / n,
        grad,
    })
}

fn sample_loss(
    kind: LossKind,
    lambda: f64,
    pred: &[f64],
    label: &LabelVector,
) -> Option<LossValue> {
    match kind {
        LossKind::Asl => loss_asl(pred, label, lambda),
        LossKind::Mse => loss_mse(pred, label),
    }
}

/// One-cycle schedule: cosine warm-up from `peak/div_start` to `peak` over the
/// first `warmup_fraction` of steps, then cosine annealing to `peak/div_final`
/// at the last step.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let peak = config.peak_lr;
    let start = peak / config.div_start;
    let end = peak / config.div_final;
    if total_steps <= 1 {
        return peak;
    }
    let last = total_steps - 1;
    let warm = ((config.warmup_fraction * total_steps as f64).round() as usize).clamp(1, last);
    let step = step.min(last);
    let cos_mix = |from: f64, to: f64, frac: f64| {
        to + (from - to) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
    };
    if step <= warm {
        cos_mix(start, peak, step as f64 / warm as f64)
    } else {
        cos_mix(peak, end, (step - warm) as f64 / (last - warm) as f64)
    }
}

/// AdamW optimizer state (β1 = 0.9, β2 = 0.999, ε = 1e-8, bias-corrected).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Decoupled decay on masked entries (`p -= lr·wd·p`), then the Adam update.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        weight_decay: f64,
        decay_mask: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer shape mismatch".into()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} = {} at optimizer step {}",
                grads[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if decay_mask.is_none_or(|m| m[i]) {
                params[i] -= lr * weight_decay * params[i];
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Batch loss and gradient: per-sample losses averaged over samples that have
/// at least one valid label entry.
pub fn batch_gradient(
    params: &ModelParams,
    set: &PreparedSet,
    indices: &[usize],
    kind: LossKind,
    lambda: f64,
    grad: &mut [f64],
) -> Result<Option<f64>> {
    grad.fill(0.0);
    let mut total = 0.0;
    let mut counted = 0usize;
    for &i in indices {
        let (pred, cache) = forward_raw(params, set.input(i))?;
        let Some(lv) = sample_loss(kind, lambda, &pred, &set.labels[i]) else {
            continue;
        };
        total += lv.loss;
        counted += 1;
        backward_accumulate(params, &cache, &lv.grad, grad)?;
    }
    if counted == 0 {
        return Ok(None);
    }
    let scale = 1.0 / counted as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(Some(total * scale))
}

/// Mean per-sample loss over a set.
pub fn evaluate_loss(
    params: &ModelParams,
    set: &PreparedSet,
    kind: LossKind,
    lambda: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..set.len() {
        let (pred, _) = forward_raw(params, set.input(i))?;
        if let Some(lv) = sample_loss(kind, lambda, &pred, &set.labels[i]) {
            total += lv.loss;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::NoData("no sample with a valid label entry".into()));
    }
    Ok(total / counted as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Set on the last step of each epoch.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    /// `step,epoch,lr,train_loss,val_loss`; `val_loss` is empty between epochs.
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "epoch", "lr", "train_loss", "val_loss"])?;
        for r in &self.log {
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains a fresh model with seeded shuffling and keeps the parameters of the
/// epoch with the lowest validation loss.
pub fn train(
    train_set: &PreparedSet,
    val_set: &PreparedSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let mut params = init_params(model_config, config.seed)?;
    let decay_mask = params.layout.decay_mask();
    let mut opt = AdamW::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let lambda = config.effective_lambda();
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut log = Vec::with_capacity(total_steps);
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = lr_schedule(step, total_steps, config);
            let loss = batch_gradient(
                &params,
                train_set,
                batch,
                config.loss_kind,
                lambda,
                &mut grad,
            )?;
            if let Some(loss) = loss {
                opt.step(
                    &mut params.data,
                    &grad,
                    lr,
                    config.weight_decay,
                    Some(&decay_mask),
                )?;
                log.push(LogRow {
                    step,
                    epoch,
                    lr,
                    train_loss: loss,
                    val_loss: None,
                });
            }
            step += 1;
        }
        let val_loss = evaluate_loss(&params, val_set, config.loss_kind, lambda)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: val_loss,
            });
        }
        if let Some(last) = log.last_mut() {
            last.val_loss = Some(val_loss);
        }
        if best.as_ref().is_none_or(|b| val_loss < b.2) {
            best = Some((params.clone(), epoch, val_loss));
        }
    }
    let (best, best_epoch, best_val_loss) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        log,
    })
}
