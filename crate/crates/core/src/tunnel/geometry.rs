use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{layer_geometry, train_fresh, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{CkaMatrix, VarianceReport};
use crate::nn::{read_checkpoint, Network, TrainOutcome};

/// Source of the network measured by the metrics experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Parameters to load instead of training; must match the configured
    /// architecture.
    pub checkpoint: Option<PathBuf>,
}

/// Representation geometry of every layer on the test split, without probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_layers: usize,
    pub layer_widths: Vec<usize>,
    pub test_accuracy: f64,
    pub rank_curve: Vec<usize>,
    pub variance_curve: Vec<VarianceReport>,
    pub l1_drift: Vec<Option<f64>>,
    pub cka: Option<CkaMatrix>,
}

#[derive(Debug, Clone)]
pub struct MetricsRun {
    pub report: MetricsReport,
    /// Present when the network was trained rather than loaded.
    pub outcome: Option<TrainOutcome>,
}

pub fn run_metrics_experiment(cfg: &ExperimentConfig) -> Result<MetricsRun> {
    cfg.validate()?;
    let (train_data, test_data) = cfg.data.load()?;
    let spec = cfg.network.spec(train_data.dim(), train_data.num_classes)?;
    let (net, outcome) = match &cfg.metrics.checkpoint {
        Some(path) => {
            let net = Network {
                spec,
                layers: read_checkpoint(path)?,
                rng_seed: cfg.init_seed(),
            };
            net.validate().map_err(|e| {
                Error::Config(format!("checkpoint {} does not fit the network: {e}", path.display()))
            })?;
            (net, None)
        }
        None => {
            let outcome = train_fresh(&spec, &train_data, &test_data, cfg)?;
            (outcome.network.clone(), Some(outcome))
        }
    };
    let (acts, _) = net.forward_collect(&test_data.features)?;
    let g = layer_geometry(&acts, &test_data.labels, test_data.num_classes, cfg)?;
    Ok(MetricsRun {
        report: MetricsReport {
            num_layers: acts.len(),
            layer_widths: acts.layers.iter().map(|m| m.ncols()).collect(),
            test_accuracy: net.accuracy(&test_data.features, &test_data.labels)?,
            rank_curve: g.ranks,
            variance_curve: g.variance,
            l1_drift: g.drift,
            cka: g.cka,
        },
        outcome,
    })
}
