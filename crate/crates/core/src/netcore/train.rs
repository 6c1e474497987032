use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::VectorFieldNet;
use super::stack::ChannelStack;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 1e-4;
pub const LR_DECAY: f64 = 0.90;
pub const DEFAULT_BATCH: usize = 16;

/// One supervised example: network input, flow step, metadata and target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: ChannelStack,
    pub t: Option<f64>,
    pub meta: Option<Vec<f64>>,
    pub target: ChannelStack,
}

/// Deterministic pairwise reduction; the tree shape depends only on the count.
pub fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

fn sample_loss(net: &VectorFieldNet, s: &Sample) -> Result<f64> {
    let out = net.forward(&s.input, s.t, s.meta.as_deref())?;
    check_target(&out, &s.target)?;
    Ok(out.data.iter().zip(&s.target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.data.len() as f64)
}

fn check_target(out: &ChannelStack, target: &ChannelStack) -> Result<()> {
    if out.data.len() != target.data.len() {
        return Err(Error::Shape(format!(
            "target has {} values, output {}",
            target.data.len(),
            out.data.len()
        )));
    }
    Ok(())
}

/// Mean squared error over the batch (each sample weighted equally).
pub fn batch_loss(net: &VectorFieldNet, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let losses: Vec<f64> = batch.par_iter().map(|s| sample_loss(net, s)).collect::<Result<_>>()?;
    let loss = pairwise_sum(losses.into_iter().map(|l| vec![l]).collect())[0] / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Exact gradient of [`batch_loss`] with respect to every parameter.
pub fn loss_and_grad(net: &VectorFieldNet, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let (out, tape) = net.forward_with_tape(&s.input, s.t, s.meta.as_deref())?;
            check_target(&out, &s.target)?;
            let n = out.data.len() as f64;
            let mut gy = out.clone();
            let mut loss = 0.0;
            for (g, t) in gy.data.iter_mut().zip(&s.target.data) {
                let d = *g - t;
                loss += d * d;
                *g = 2.0 * d / n * scale;
            }
            let mut grad = vec![0.0; net.param_count()];
            net.backward(&tape, &gy, &mut grad);
            Ok((loss / n, grad))
        })
        .collect::<Result<_>>()?;
    let (losses, grads): (Vec<f64>, Vec<Vec<f64>>) = parts.into_iter().unzip();
    let loss = pairwise_sum(losses.into_iter().map(|l| vec![l]).collect())[0] * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, pairwise_sum(grads)))
}

/// Optimizer state owned by the single training writer.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: VectorFieldNet,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(net: VectorFieldNet, lr: f64) -> Self {
        let n = net.param_count();
        TrainState {
            net,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            epoch: 0,
        }
    }

    /// Adam with bias correction.
    pub fn adam_step(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, parameters {}",
                grad.len(),
                self.m.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let lr = self.lr;
        let params = self.net.params_mut();
        for (((p, m), v), &g) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.lr *= LR_DECAY;
        self.epoch += 1;
    }
}

/// Supplies training batches and a fixed validation set.
pub trait BatchSampler: Sync {
    fn sample_batch(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Result<Vec<Sample>>;
    fn validation(&self) -> &[Sample];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            steps_per_epoch: 50,
            batch_size: DEFAULT_BATCH,
            lr: DEFAULT_LR,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Runs `epochs x steps_per_epoch` Adam steps and returns the parameters
/// with the lowest validation loss seen at any epoch end.
pub fn train(mut state: TrainState, sampler: &dyn BatchSampler, cfg: &TrainConfig) -> Result<(VectorFieldNet, TrainReport)> {
    if sampler.validation().is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = (f64::INFINITY, 0usize, state.net.clone());
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut train_sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let batch = sampler.sample_batch(&mut rng, cfg.batch_size)?;
            let (loss, grad) = loss_and_grad(&state.net, &batch)?;
            train_sum += loss;
            state.adam_step(&grad)?;
        }
        let val_loss = batch_loss(&state.net, sampler.validation())?;
        curve.push(EpochLog {
            epoch,
            train_loss: train_sum / cfg.steps_per_epoch.max(1) as f64,
            val_loss,
            lr: state.lr,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, state.net.clone());
        }
        state.end_epoch();
    }
    Ok((
        best.2,
        TrainReport {
            curve,
            best_epoch: best.1,
            best_val_loss: best.0,
            steps: state.step,
        },
    ))
}
