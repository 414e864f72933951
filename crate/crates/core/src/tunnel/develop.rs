use serde::{Deserialize, Serialize};

use super::{analyze, ExperimentConfig, TunnelReport};
use crate::error::{precondition, Result};
use crate::linalg::{Matrix, SpectrumPolicy};
use crate::metrics::representation_rank;
use crate::nn::{init_network, reset_layers, train_observed, weight_change_norm, Network, TrainObserver, TrainOutcome};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DevelopConfig {
    /// Checkpoint cadence in epochs; replaces `train.checkpoint_every`.
    pub checkpoint_every: usize,
    /// Number of initial optimiser steps with a rank capture after each.
    pub rank_steps: usize,
    /// Leading checkpoint pairs left out of the extractor/tunnel summary.
    pub warmup_pairs: usize,
}

impl Default for DevelopConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 2,
            rank_steps: 75,
            warmup_pairs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentReport {
    pub final_report: TunnelReport,
    pub checkpoint_epochs: Vec<usize>,
    /// `[pair][layer]` weight change between consecutive checkpoints.
    pub weight_change: Vec<Vec<f64>>,
    /// Optimiser step of each rank capture.
    pub rank_steps: Vec<usize>,
    /// `[capture][layer]` numerical rank on the test split.
    pub rank_evolution: Vec<Vec<usize>>,
    /// Mean weight change over post-warmup pairs, extractor hidden layers.
    pub mean_change_extractor: Option<f64>,
    /// Same over tunnel hidden layers; the classifier is in neither group.
    pub mean_change_tunnel: Option<f64>,
    /// Test accuracy after restoring tunnel hidden layers to initialisation.
    pub reset_tunnel_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DevelopmentRun {
    pub report: DevelopmentReport,
    pub outcome: TrainOutcome,
}

struct RankRecorder<'a> {
    probe: &'a Matrix,
    policy: SpectrumPolicy,
    step_limit: usize,
    steps: Vec<usize>,
    ranks: Vec<Vec<usize>>,
}

impl RankRecorder<'_> {
    fn capture(&mut self, step: usize, net: &Network) -> Result<()> {
        let (acts, _) = net.forward_collect(self.probe)?;
        let ranks = par::try_map_range(acts.len(), |l| representation_rank(&acts.layers[l], &self.policy))?;
        self.steps.push(step);
        self.ranks.push(ranks);
        Ok(())
    }
}

impl TrainObserver for RankRecorder<'_> {
    fn after_step(&mut self, _epoch: usize, step: usize, net: &Network) -> Result<()> {
        if step <= self.step_limit {
            self.capture(step, net)?;
        }
        Ok(())
    }

    fn after_epoch(&mut self, _epoch: usize, step: usize, net: &Network) -> Result<()> {
        if step > self.step_limit {
            self.capture(step, net)?;
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Trains the backbone while recording per-step ranks and periodic
/// checkpoints, then summarises weight movement per layer.
pub fn run_development_experiment(cfg: &ExperimentConfig) -> Result<DevelopmentRun> {
    cfg.validate()?;
    let (train_data, test_data) = cfg.data.load()?;
    if test_data.is_empty() {
        return Err(precondition("development experiment needs test data"));
    }
    let spec = cfg.network.spec(train_data.dim(), train_data.num_classes)?;
    let net = init_network(&spec, cfg.init_seed())?;
    let train_cfg = crate::nn::TrainConfig {
        checkpoint_every: cfg.develop.checkpoint_every,
        ..cfg.effective_train()
    };
    let mut recorder = RankRecorder {
        probe: &test_data.features,
        policy: cfg.effective_spectrum(),
        step_limit: cfg.develop.rank_steps,
        steps: Vec::new(),
        ranks: Vec::new(),
    };
    recorder.capture(0, &net)?;
    let outcome = train_observed(&net, &train_data, &test_data, &train_cfg, &mut recorder)?;

    let layers = outcome.network.num_layers();
    let weight_change = outcome
        .checkpoints
        .windows(2)
        .map(|w| (0..layers).map(|l| weight_change_norm(&w[0], &w[1], l)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let depth = spec.depth();
    let mut final_report = analyze(&outcome.network, &train_data, &test_data, outcome.test_accuracy, cfg)?;
    final_report.train_loss = outcome.epoch_losses.clone();
    let split = final_report.extractor_length();
    let post = weight_change.iter().skip(cfg.develop.warmup_pairs);
    let mean_change_extractor = mean(post.clone().flat_map(|row| row[..split].to_vec()));
    let mean_change_tunnel = mean(post.flat_map(|row| row[split..depth].to_vec()));
    let reset_tunnel_accuracy = if split < depth {
        let reset = reset_layers(&outcome.network, &outcome.checkpoints[0], split..depth)?;
        Some(reset.accuracy(&test_data.features, &test_data.labels)?)
    } else {
        None
    };
    Ok(DevelopmentRun {
        report: DevelopmentReport {
            final_report,
            checkpoint_epochs: outcome.checkpoints.iter().map(|c| c.epoch).collect(),
            weight_change,
            rank_steps: recorder.steps,
            rank_evolution: recorder.ranks,
            mean_change_extractor,
            mean_change_tunnel,
            reset_tunnel_accuracy,
        },
        outcome,
    })
}
