use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{grad::loss_and_gradients, Layer, Network};
use crate::data::Dataset;
use crate::error::{dimension, precondition, Error, Result};
use crate::seed;

/// Mini-batch SGD with heavy-ball momentum and L2 weight decay.
///
/// Per parameter: `g += weight_decay * p; v = momentum * v + g; p -= lr * v`.
/// The learning rate is multiplied by `lr_decay_gamma` at the start of every
/// epoch listed in `lr_decay_milestones`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay_milestones: Vec<usize>,
    pub lr_decay_gamma: f64,
    pub seed: u64,
    /// Epoch cadence of intermediate checkpoints; 0 keeps only the first and
    /// last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.04,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 128,
            lr_decay_milestones: Vec::new(),
            lr_decay_gamma: 0.1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(precondition(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(precondition(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(precondition(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(precondition("batch_size must be at least 1"));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(precondition(format!(
                "lr_decay_gamma must lie in (0, 1], got {}",
                self.lr_decay_gamma
            )));
        }
        let m = &self.lr_decay_milestones;
        if m.windows(2).any(|w| w[0] >= w[1]) {
            return Err(precondition("lr_decay_milestones must be strictly increasing"));
        }
        if m.last().is_some_and(|&last| last >= self.epochs) {
            return Err(precondition("lr_decay_milestones must be below epochs"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_decay_milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.lr_decay_gamma.powi(passed as i32)
    }

    fn wants_checkpoint(&self, epoch: usize) -> bool {
        epoch == 0 || epoch == self.epochs || (self.checkpoint_every > 0 && epoch.is_multiple_of(self.checkpoint_every))
    }
}

/// Snapshot of all parameters after `step` optimiser updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub step: usize,
    pub layers: Vec<Layer<f32>>,
}

impl Checkpoint {
    pub fn of(net: &Network, epoch: usize, step: usize) -> Self {
        Self {
            epoch,
            step,
            layers: net.layers.clone(),
        }
    }
}

/// Hooks called from inside the training loop. `step` counts completed
/// updates; `epoch` counts completed epochs.
pub trait TrainObserver {
    fn after_step(&mut self, _epoch: usize, _step: usize, _net: &Network) -> Result<()> {
        Ok(())
    }

    fn after_epoch(&mut self, _epoch: usize, _step: usize, _net: &Network) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub checkpoints: Vec<Checkpoint>,
    pub test_accuracy: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

pub fn train(net: &Network, train_data: &Dataset, test_data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(net, train_data, test_data, cfg, &mut ())
}

fn check_data(net: &Network, data: &Dataset, role: &str) -> Result<()> {
    if data.features.ncols() != net.spec.input_dim {
        return Err(dimension(format!(
            "{role} data has {} features, network expects {}",
            data.features.ncols(),
            net.spec.input_dim
        )));
    }
    let classes = net.spec.num_classes;
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(precondition(format!(
            "{role} label {bad} outside [0, {classes})"
        )));
    }
    Ok(())
}

pub fn train_observed(
    net: &Network,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    check_data(net, train_data, "train")?;
    check_data(net, test_data, "test")?;
    if train_data.is_empty() && cfg.epochs > 0 {
        return Err(precondition("cannot train on an empty dataset"));
    }

    let mut net = net.clone();
    let x = train_data.features.mapv(|v| v as f32);
    let n = x.nrows();
    let mut velocity: Vec<Layer<f32>> = net
        .layers
        .iter()
        .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
        .collect();
    let mut checkpoints = vec![Checkpoint::of(&net, 0, 0)];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let momentum = cfg.momentum as f32;
    let decay = cfg.weight_decay as f32;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch) as f32;
        order.sort_unstable();
        order.shuffle(&mut seed::derived_rng(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train_data.labels[i]).collect();
            let (loss, grads) = loss_and_gradients(&net, xb.view(), &yb)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: loss as f64,
                });
            }
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut velocity).zip(grads) {
                update(&mut layer.weight, &mut v.weight, g.weight, lr, momentum, decay);
                update_vec(&mut layer.bias, &mut v.bias, g.bias, lr, momentum, decay);
            }
            step += 1;
            loss_sum += loss as f64;
            batches += 1;
            observer.after_step(epoch, step, &net)?;
        }
        epoch_losses.push(loss_sum / batches as f64);
        if cfg.wants_checkpoint(epoch + 1) {
            checkpoints.push(Checkpoint::of(&net, epoch + 1, step));
        }
        observer.after_epoch(epoch + 1, step, &net)?;
    }

    let test_accuracy = if test_data.is_empty() {
        f64::NAN
    } else {
        net.accuracy(&test_data.features, &test_data.labels)?
    };
    Ok(TrainOutcome {
        network: net,
        checkpoints,
        test_accuracy,
        epoch_losses,
        steps: step,
    })
}

fn update(p: &mut Array2<f32>, v: &mut Array2<f32>, g: Array2<f32>, lr: f32, mu: f32, wd: f32) {
    ndarray::Zip::from(p).and(v).and(&g).for_each(|p, v, &g| {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * *v;
    });
}

fn update_vec(p: &mut Array1<f32>, v: &mut Array1<f32>, g: Array1<f32>, lr: f32, mu: f32, wd: f32) {
    ndarray::Zip::from(p).and(v).and(&g).for_each(|p, v, &g| {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * *v;
    });
}
