//! Training: linear-warmup/cosine-decay schedule, adaptive-moment
//! optimizers with decoupled decay on linear layers, gradient clipping,
//! and a per-step trace.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss_and_grads, GptModel, ParamClass, Parameters};
use super::GeneratorError;
use crate::rng::derive_seed;
use crate::smiles::{FramedSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    /// Fraction of total steps spent on linear warmup.
    pub warmup_fraction: f64,
}

impl TrainSchedule {
    pub fn pretrain(batch_size: usize, epochs: usize) -> Self {
        TrainSchedule {
            batch_size,
            epochs,
            peak_lr: 3e-4,
            floor_lr: 3e-5,
            warmup_fraction: 0.10,
        }
    }

    pub fn fine_tune(batch_size: usize) -> Self {
        TrainSchedule {
            batch_size,
            epochs: 10,
            peak_lr: 3e-5,
            floor_lr: 3e-6,
            warmup_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(GeneratorError::InvalidConfig("empty batch or epochs"));
        }
        if !(self.floor_lr > 0.0 && self.floor_lr <= self.peak_lr) {
            return Err(GeneratorError::InvalidConfig("floor lr must be in (0, peak]"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(GeneratorError::InvalidConfig("warmup fraction outside [0,1]"));
        }
        Ok(())
    }

    /// Learning rate at `step` of `total` steps: 0 → peak linearly over the
    /// warmup steps, then cosine from peak to exactly the floor at the end.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_fraction * total as f64).round() as usize;
        if step < warmup {
            return self.peak_lr * step as f64 / warmup as f64;
        }
        let span = total.saturating_sub(1).saturating_sub(warmup).max(1);
        let progress = (step - warmup) as f64 / span as f64;
        self.floor_lr
            + 0.5 * (self.peak_lr - self.floor_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

fn d_adam_b1() -> f64 {
    0.9
}
fn d_adam_b2() -> f64 {
    0.999
}
fn d_adam_eps() -> f64 {
    1e-8
}
fn d_sophia_b1() -> f64 {
    0.965
}
fn d_sophia_b2() -> f64 {
    0.99
}
fn d_sophia_rho() -> f64 {
    0.04
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", rename_all = "snake_case")]
pub enum Optimizer {
    AdamW {
        #[serde(default = "d_adam_b1")]
        beta1: f64,
        #[serde(default = "d_adam_b2")]
        beta2: f64,
        #[serde(default = "d_adam_eps")]
        eps: f64,
    },
    /// Clipped-ratio update with an empirical-Fisher curvature estimate.
    SophiaG {
        #[serde(default = "d_sophia_b1")]
        beta1: f64,
        #[serde(default = "d_sophia_b2")]
        beta2: f64,
        #[serde(default = "d_sophia_rho")]
        rho: f64,
    },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: d_adam_b1(),
            beta2: d_adam_b2(),
            eps: d_adam_eps(),
        }
    }

    pub fn sophia_g() -> Self {
        Optimizer::SophiaG {
            beta1: d_sophia_b1(),
            beta2: d_sophia_b2(),
            rho: d_sophia_rho(),
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adamw()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    /// Post-clip global gradient norms.
    pub grad_norms: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "step,loss,lr,grad_norm")?;
        for (i, ((loss, lr), norm)) in self
            .losses
            .iter()
            .zip(&self.lrs)
            .zip(&self.grad_norms)
            .enumerate()
        {
            writeln!(writer, "{i},{loss},{lr},{norm}")?;
        }
        Ok(())
    }
}

/// Scales gradients so the global norm is at most `max_norm`; returns the
/// pre-clip norm.
pub(crate) fn clip_gradients(grads: &mut Parameters, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (t, _) in grads.tensors() {
        for v in &t.data {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() && norm > 0.0 {
        let scale = max_norm / norm;
        for (t, _) in grads.tensors_mut() {
            for v in &mut t.data {
                *v *= scale;
            }
        }
    }
    norm
}

struct OptimState {
    m: Parameters,
    v: Parameters,
    t: u32,
}

fn apply_step(
    opt: &Optimizer,
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimState,
    lr: f64,
    lambda: f64,
) {
    let ws = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    match *opt {
        Optimizer::AdamW { beta1, beta2, eps } => {
            state.t += 1;
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            for (((w, g), m), v) in ws.into_iter().zip(gs).zip(ms).zip(vs) {
                let decay = w.1 == ParamClass::Linear;
                for i in 0..w.0.data.len() {
                    let grad = g.0.data[i];
                    let m1 = beta1 * m.0.data[i] + (1.0 - beta1) * grad;
                    let v1 = beta2 * v.0.data[i] + (1.0 - beta2) * grad * grad;
                    m.0.data[i] = m1;
                    v.0.data[i] = v1;
                    let value = &mut w.0.data[i];
                    if decay {
                        *value -= lr * lambda * *value;
                    }
                    *value -= lr * (m1 / bc1) / ((v1 / bc2).sqrt() + eps);
                }
            }
        }
        Optimizer::SophiaG { beta1, beta2, rho } => {
            for (((w, g), m), h) in ws.into_iter().zip(gs).zip(ms).zip(vs) {
                let decay = w.1 == ParamClass::Linear;
                for i in 0..w.0.data.len() {
                    let grad = g.0.data[i];
                    let m1 = beta1 * m.0.data[i] + (1.0 - beta1) * grad;
                    let h1 = beta2 * h.0.data[i] + (1.0 - beta2) * grad * grad;
                    m.0.data[i] = m1;
                    h.0.data[i] = h1;
                    let value = &mut w.0.data[i];
                    if decay {
                        *value -= lr * lambda * *value;
                    }
                    *value -= lr * (m1 / (rho * h1 + 1e-15)).clamp(-1.0, 1.0);
                }
            }
        }
    }
}

/// Splits a frame into (input, target) windows, trimmed at the end marker so
/// padding never contributes loss; the end token itself is still predicted.
fn split_frame(ids: &[u32], vocab: &Vocabulary) -> Option<(Vec<u32>, Vec<u32>)> {
    let end = ids
        .iter()
        .position(|&id| id == vocab.end_id())
        .map(|p| p + 1)
        .unwrap_or(ids.len());
    if end < 2 {
        return None;
    }
    let eff = &ids[..end];
    Some((eff[..eff.len() - 1].to_vec(), eff[1..].to_vec()))
}

/// Runs the full schedule over the framed corpus, mutating the model in
/// place. Batches are reshuffled every epoch from the seed; the trace holds
/// one entry per optimizer step.
pub fn train(
    model: &mut GptModel,
    corpus: &[FramedSequence],
    schedule: &TrainSchedule,
    optimizer: &Optimizer,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<TrainReport, GeneratorError> {
    schedule.validate()?;
    let cfg = model.config().clone();
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .iter()
        .filter_map(|f| split_frame(f.ids(), vocab))
        .collect();
    if pairs.is_empty() {
        return Err(GeneratorError::EmptyCorpus);
    }
    for (inp, _) in &pairs {
        if inp.len() >= cfg.max_seq_len() {
            return Err(GeneratorError::LengthExceeded {
                len: inp.len() + 1,
                max: cfg.max_seq_len(),
            });
        }
    }
    let steps_per_epoch = pairs.len().div_ceil(schedule.batch_size);
    let total_steps = steps_per_epoch * schedule.epochs;
    let mut state = OptimState {
        m: model.params.zeros_like(),
        v: model.params.zeros_like(),
        t: 0,
    };
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(&[u32], &[u32])> = chunk
                .iter()
                .map(|&i| (pairs[i].0.as_slice(), pairs[i].1.as_slice()))
                .collect();
            let mut drop_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, (1u64 << 32) | step as u64));
            let (loss, mut grads) =
                batch_loss_and_grads(&model.params, &cfg, &batch, Some(&mut drop_rng));
            if !loss.is_finite() {
                return Err(GeneratorError::NonFiniteLoss { step });
            }
            let raw_norm = clip_gradients(&mut grads, cfg.grad_clip);
            let lr = schedule.lr_at(step, total_steps);
            apply_step(optimizer, &mut model.params, &grads, &mut state, lr, cfg.weight_decay);
            report.losses.push(loss);
            report.lrs.push(lr);
            report.grad_norms.push(raw_norm.min(cfg.grad_clip));
            step += 1;
        }
    }
    Ok(report)
}
