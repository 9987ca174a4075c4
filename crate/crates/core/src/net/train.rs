//! Adam training with plateau learning-rate halving.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Network, Params};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before the rate is halved.
    pub patience: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<usize>,
    /// Stop once the mean training NPCC of an epoch reaches this value.
    pub target_npcc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 10,
            learning_rate: 1e-3,
            patience: 5,
            seed: 0,
            max_steps: None,
            target_npcc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.patience == 0 {
            return Err(Error::Config(format!(
                "batch size {}, learning rate {} and patience {} must be positive",
                self.batch_size, self.learning_rate, self.patience
            )));
        }
        Ok(())
    }
}

/// One training example: M approximant volumes and the ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub seq: Vec<Tensor<f32>>,
    pub target: Tensor<f32>,
}

/// Zero-mean, unit-variance scaling over the whole sequence. A constant
/// sequence is only centred.
pub fn standardize<T: Scalar>(seq: &mut [Tensor<T>]) {
    let n: usize = seq.iter().map(Tensor::len).sum();
    if n == 0 {
        return;
    }
    let nf = n as f64;
    let mean = seq.iter().flat_map(|t| t.data()).map(|v| v.as_f64()).sum::<f64>() / nf;
    let var = seq
        .iter()
        .flat_map(|t| t.data())
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / nf;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for t in seq {
        *t = t.map(|v| T::lit((v.as_f64() - mean) * scale));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: &Params<f32>, lr: f64) -> Self {
        let zeros = || params.tensors.values().map(|t| vec![0.0f32; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn step(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (self.lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, (p, g)) in params.tensors.values_mut().zip(grads.tensors.values()).enumerate() {
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= step * *mi / (vi.sqrt() / c2s + eps);
            }
        }
    }
}

/// Halves the rate after `patience` epochs without a new best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub best: f64,
    pub wait: usize,
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Plateau {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records a validation loss; returns `(improved, halve)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
            return (true, false);
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (false, true);
        }
        (false, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_npcc: f64,
    pub val_npcc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStop {
    Completed,
    MaxSteps,
    TargetReached,
    NonFinite { epoch: usize, step: usize },
}

pub struct TrainOutcome {
    /// Parameters after the last finite step.
    pub params: Params<f32>,
    /// Parameters with the lowest validation loss.
    pub best: Params<f32>,
    pub best_val: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stop: TrainStop,
    pub optimizer: AdamState,
}

/// Mean loss and summed gradient of a batch, reduced in sample order.
pub fn batch_gradient(net: &Network, params: &Params<f32>, batch: &[&Sample]) -> Result<(f64, Params<f32>)> {
    let parts: Vec<(f32, Params<f32>)> = batch
        .par_iter()
        .map(|s| net.loss_and_grad(params, &s.seq, &s.target).map(|(l, r)| (l, r.grads)))
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f32;
    for (l, g) in &parts {
        loss += *l as f64;
        for (acc, gi) in total.tensors.values_mut().zip(g.tensors.values()) {
            acc.scaled_add(scale, gi);
        }
    }
    Ok((loss / batch.len() as f64, total))
}

/// Mean NPCC over a set, evaluated in sample order.
pub fn mean_loss(net: &Network, params: &Params<f32>, set: &[Sample]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("empty evaluation set".into()));
    }
    let losses: Vec<f32> = set
        .par_iter()
        .map(|s| net.loss(params, &s.seq, &s.target))
        .collect::<Result<_>>()?;
    Ok(losses.iter().map(|&l| l as f64).sum::<f64>() / set.len() as f64)
}

/// Runs Adam over shuffled mini-batches. `on_epoch` sees every finished
/// epoch with the current parameters and whether they are the best so far.
pub fn train(
    net: &Network,
    init: Params<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Params<f32>, bool) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    net.check_params(&init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut plateau = Plateau::new(cfg.patience);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut history = Vec::new();
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = TrainStop::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stop = TrainStop::MaxSteps;
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(net, &params, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, step {}", steps + 1);
                stop = TrainStop::NonFinite { epoch, step: steps + 1 };
                break 'epochs;
            }
            adam.step(&mut params, &grads);
            steps += 1;
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        if count == 0 {
            break;
        }
        let train_npcc = sum / count as f64;
        let val_npcc = if val_set.is_empty() {
            train_npcc
        } else {
            mean_loss(net, &params, val_set)?
        };
        let record = EpochRecord {
            epoch,
            train_npcc,
            val_npcc,
            lr: adam.lr,
        };
        let (improved, halve) = plateau.observe(val_npcc);
        if improved {
            best = params.clone();
            best_val = val_npcc;
        }
        log::info!(
            "epoch {epoch}: train {train_npcc:.4} val {val_npcc:.4} lr {:.2e} steps {steps}",
            adam.lr
        );
        on_epoch(&record, &params, improved)?;
        history.push(record);
        if halve {
            adam.lr *= 0.5;
        }
        if cfg.target_npcc.is_some_and(|t| train_npcc <= t) {
            stop = TrainStop::TargetReached;
            break;
        }
        if stop == TrainStop::MaxSteps {
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        best,
        best_val,
        history,
        steps,
        stop,
        optimizer: adam.state,
    })
}
