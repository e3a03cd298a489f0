//! AdamW training with linear warmup and cosine decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ModelParams};
use crate::vocab::{Token, TokenSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub num_epochs: usize,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Steps between loss-curve points.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 3e-4,
            min_lr: 3e-5,
            warmup_fraction: 0.02,
            batch_size: 64,
            num_epochs: 1,
            betas: (0.9, 0.95),
            weight_decay: 0.1,
            grad_clip: Some(1.0),
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.peak_lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return bad("need 0 <= min_lr <= peak_lr and peak_lr > 0");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.num_epochs == 0 || self.log_every == 0 {
            return bad("batch_size, num_epochs and log_every must be positive");
        }
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad("optimizer betas must lie in (0, 1)");
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("weight_decay must be non-negative and grad_clip positive");
        }
        Ok(())
    }
}

/// Linear warmup to `peak` followed by cosine decay to `min`.
///
/// Steps are zero-based. The last warmup step (`warmup - 1`) runs at `peak`
/// and the final step (`total - 1`) at `min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub min: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, min: f64, warmup_fraction: f64, total: usize) -> Self {
        let warmup = ((warmup_fraction * total as f64).round() as usize).max(1);
        LrSchedule { peak, min, warmup, total }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let last = self.total.saturating_sub(1);
        if last < self.warmup {
            return self.peak;
        }
        let progress = ((step - (self.warmup - 1)) as f64 / (last - (self.warmup - 1)) as f64).min(1.0);
        self.min + (self.peak - self.min) * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices only.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    decay_mask: Vec<bool>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ModelParams<f32>, betas: (f64, f64), weight_decay: f64) -> Self {
        let mut decay_mask = vec![false; params.num_params()];
        for spec in params.layout().specs() {
            if spec.is_matrix() {
                decay_mask[spec.range()].fill(true);
            }
        }
        AdamW {
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; params.num_params()],
            v: vec![0.0; params.num_params()],
            decay_mask,
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams<f32>, grads: &[f32], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (lr / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        let eps = self.eps as f32;
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let data = params.data_mut();
        for i in 0..data.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            if self.decay_mask[i] {
                data[i] *= decay;
            }
            data[i] -= step_size * self.m[i] / (self.v[i].sqrt() * inv_bc2_sqrt + eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / (norm + 1e-6)) as f32;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// A re-iterable, sized collection of training sequences.
pub trait SequenceSource {
    fn num_sequences(&self) -> usize;
    fn sequences(&self) -> Box<dyn Iterator<Item = TokenSequence> + '_>;
}

impl SequenceSource for [TokenSequence] {
    fn num_sequences(&self) -> usize {
        self.len()
    }

    fn sequences(&self) -> Box<dyn Iterator<Item = TokenSequence> + '_> {
        Box::new(self.iter().cloned())
    }
}

impl SequenceSource for Vec<TokenSequence> {
    fn num_sequences(&self) -> usize {
        self.len()
    }

    fn sequences(&self) -> Box<dyn Iterator<Item = TokenSequence> + '_> {
        Box::new(self.iter().cloned())
    }
}

/// Progress report passed to the training callback after each step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub step: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub mean_nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    /// Mean loss over each `log_every` window, keyed by its last step.
    pub loss_curve: Vec<LossPoint>,
    pub total_steps: usize,
    pub tokens_seen: usize,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().map(|p| p.mean_nll)
    }
}

pub fn total_steps(num_sequences: usize, tc: &TrainConfig) -> usize {
    num_sequences.div_ceil(tc.batch_size) * tc.num_epochs
}

/// Right-pads a batch with PAD into a dense `[batch, max_len]` id buffer.
pub fn pad_batch(batch: &[TokenSequence]) -> (Vec<usize>, usize) {
    let max_len = batch.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(batch.len() * max_len);
    for s in batch {
        ids.extend(s.tokens().iter().map(|t| t.id()));
        ids.extend(std::iter::repeat_n(Token::PAD.id(), max_len - s.len()));
    }
    (ids, max_len)
}

pub fn train(params: ModelParams<f32>, data: &dyn SequenceSource, tc: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(params, data, tc, |_| {})
}

/// Trains on `data` in the order it is produced, for `tc.num_epochs` passes.
/// Sequences must contain no PAD and fit `max_seq_len`.
pub fn train_with_callback(
    mut params: ModelParams<f32>,
    data: &dyn SequenceSource,
    tc: &TrainConfig,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<TrainOutcome> {
    tc.validate()?;
    let n = data.num_sequences();
    if n == 0 {
        return Err(Error::Argument("training set is empty".into()));
    }
    let total = total_steps(n, tc);
    let schedule = LrSchedule::new(tc.peak_lr, tc.min_lr, tc.warmup_fraction, total);
    let mut opt = AdamW::new(&params, tc.betas, tc.weight_decay);
    let max_len = params.config().max_seq_len;

    let mut curve = Vec::new();
    let mut window = (0.0f64, 0usize);
    let mut step = 0;
    let mut tokens_seen = 0;
    let mut batch = Vec::with_capacity(tc.batch_size);
    for _epoch in 0..tc.num_epochs {
        let mut iter = data.sequences();
        let mut batch_id = 0;
        loop {
            batch.clear();
            batch.extend(iter.by_ref().take(tc.batch_size));
            if batch.is_empty() {
                break;
            }
            if let Some(bad) = batch.iter().find(|s| s.len() > max_len || s.len() < 2) {
                return Err(Error::Length { len: bad.len(), max: max_len });
            }
            let (ids, len) = pad_batch(&batch);
            let mut out = loss_and_grad(&params, &ids, batch.len(), len);
            if !out.mean_nll.is_finite() {
                return Err(Error::NonFiniteLoss { step, batch: batch_id });
            }
            let grad_norm = match tc.grad_clip {
                Some(c) => clip_grad_norm(&mut out.grads, c),
                None => clip_grad_norm(&mut out.grads, f64::INFINITY),
            };
            let lr = schedule.lr(step);
            opt.update(&mut params, &out.grads, lr);
            tokens_seen += out.scored;

            window.0 += out.mean_nll;
            window.1 += 1;
            if (step + 1) % tc.log_every == 0 || step + 1 == total {
                curve.push(LossPoint { step, mean_nll: window.0 / window.1 as f64 });
                window = (0.0, 0);
            }
            on_step(&StepInfo { step, total_steps: total, lr, loss: out.mean_nll, grad_norm });
            step += 1;
            batch_id += 1;
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFiniteLoss { step, batch: 0 });
    }
    Ok(TrainOutcome { params, loss_curve: curve, total_steps: step, tokens_seen })
}
