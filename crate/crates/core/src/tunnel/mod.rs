//! Tunnel detection and the experiments built on it.
//!
//! Layer indices are 0-based over every layer of the network, classifier
//! included. A tunnel start of `s` makes layers `0..=s` the extractor, so the
//! extractor length is `s + 1` and its share of the network is
//! `(s + 1) / num_layers`.

mod develop;
mod geometry;
mod ood;
mod stitch;
mod sweep;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, make_blobs, standardize_pair, BlobSpec, Dataset};
use crate::error::{precondition, Error, Result};
use crate::linalg::SpectrumPolicy;
use crate::metrics::{cka_matrix, intra_inter_variance, l1_drift, representation_rank, CkaConfig, CkaMatrix, VarianceReport};
use crate::nn::{init_network, train, ActivationSet, Network, NetworkSpec, TrainConfig, TrainOutcome};
use crate::probes::{probe_curve_from_activations, ProbeConfig, ProbeCurve};
use crate::{par, seed};

pub use geometry::{run_metrics_experiment, MetricsConfig, MetricsReport, MetricsRun};
pub use develop::{run_development_experiment, DevelopConfig, DevelopmentReport, DevelopmentRun};
pub use ood::{run_ood_experiment, OodConfig, OodReport, OodRun};
pub use stitch::{
    run_shorter_network_experiment, run_stitch_experiment, ShorterConfig, ShorterReport, ShorterRow, StitchConfig,
    StitchEntry, StitchGrid, StitchRun, SubstitutionSweep,
};
pub use sweep::{run_capacity_sweep, SweepCell, SweepConfig, SweepReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Result of [`detect_tunnel`]. `found` is false when no layer reaches the
/// threshold; `layer` is then the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunnelBoundary {
    pub layer: usize,
    pub found: bool,
}

/// Smallest layer whose mean probe accuracy reaches `theta * reference`.
pub fn detect_tunnel(curve: &ProbeCurve, reference: f64, theta: f64) -> Result<TunnelBoundary> {
    if curve.is_empty() {
        return Err(precondition("tunnel detection on an empty probe curve"));
    }
    if reference.is_nan() || reference <= 0.0 {
        return Err(precondition(format!("reference accuracy must be > 0, got {reference}")));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(precondition(format!("theta must lie in (0, 1], got {theta}")));
    }
    let cut = theta * reference;
    Ok(match curve.mean.iter().position(|&a| a >= cut) {
        Some(layer) => TunnelBoundary { layer, found: true },
        None => TunnelBoundary {
            layer: curve.len() - 1,
            found: false,
        },
    })
}

/// Training and test data. CSV paths take precedence over the blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub blobs: BlobSpec,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    /// Class count of CSV data.
    pub num_classes: Option<usize>,
    /// Standardise features with statistics of the training split.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            blobs: BlobSpec::default(),
            train_csv: None,
            test_csv: None,
            num_classes: None,
            standardize: true,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.train_csv, &self.test_csv) {
            (None, None) => self.blobs.validate(),
            (Some(_), Some(_)) => match self.num_classes {
                Some(c) if c >= 2 => Ok(()),
                _ => Err(Error::Config("data.num_classes >= 2 is required with CSV input".into())),
            },
            _ => Err(Error::Config("data.train_csv and data.test_csv must be given together".into())),
        }
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let (train, test) = match (&self.train_csv, &self.test_csv) {
            (Some(a), Some(b)) => {
                let c = self.num_classes.expect("validated");
                (load_csv(a, c)?, load_csv(b, c)?)
            }
            _ => make_blobs(&self.blobs)?,
        };
        if train.dim() != test.dim() {
            return Err(precondition("train and test data differ in feature count"));
        }
        if self.standardize {
            standardize_pair(&train, &test)
        } else {
            Ok((train, test))
        }
    }
}

/// Hidden-layer layout. `hidden_widths`, when set, overrides `depth` and
/// `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub depth: usize,
    pub width: usize,
    pub hidden_widths: Option<Vec<usize>>,
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 12,
            width: 256,
            hidden_widths: None,
            residual: false,
        }
    }
}

impl ArchConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            input_dim,
            hidden_widths: self
                .hidden_widths
                .clone()
                .unwrap_or_else(|| vec![self.width; self.depth]),
            num_classes,
            residual: self.residual,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Settings of the per-layer measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub probe_runs: usize,
    pub compute_cka: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            probe_runs: 3,
            compute_cka: true,
        }
    }
}

/// Everything a single-network experiment needs.
///
/// The top-level `seed` drives network initialisation. Section seeds are
/// mixed with it, so changing `seed` alone reseeds every stream except data
/// generation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub network: ArchConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub spectrum: SpectrumPolicy,
    pub cka: CkaConfig,
    pub analysis: AnalysisConfig,
    pub ood: OodConfig,
    pub stitch: StitchConfig,
    pub develop: DevelopConfig,
    pub sweep: SweepConfig,
    pub shorter: ShorterConfig,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        self.spectrum.validate()?;
        self.cka.validate()?;
        if self.analysis.probe_runs == 0 {
            return Err(Error::Config("analysis.probe_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, "network", 0)
    }

    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train", self.train.seed),
            ..self.train.clone()
        }
    }

    pub fn effective_probe(&self) -> ProbeConfig {
        ProbeConfig {
            seed: seed::derive(self.seed, "probe", self.probe.seed),
            ..self.probe.clone()
        }
    }

    pub fn effective_cka(&self) -> CkaConfig {
        CkaConfig {
            seed: seed::derive(self.seed, "cka", self.cka.seed),
            ..self.cka.clone()
        }
    }

    pub fn effective_spectrum(&self) -> SpectrumPolicy {
        SpectrumPolicy {
            seed: seed::derive(self.seed, "spectrum", self.spectrum.seed),
            ..self.spectrum.clone()
        }
    }
}

/// Per-layer measurements of one trained network plus its tunnel boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelReport {
    pub num_layers: usize,
    pub layer_widths: Vec<usize>,
    pub probe_curve: ProbeCurve,
    /// Numerical rank of each layer on the evaluation split.
    pub rank_curve: Vec<usize>,
    pub variance_curve: Vec<VarianceReport>,
    /// Drift between consecutive equal-width layers, `None` across a width
    /// change.
    pub l1_drift: Vec<Option<f64>>,
    pub cka: Option<CkaMatrix>,
    pub reference_accuracy: f64,
    pub tunnel_start_95: TunnelBoundary,
    pub tunnel_start_98: TunnelBoundary,
    /// `(tunnel_start_95 + 1) / num_layers`.
    pub extractor_fraction_95: f64,
    pub extractor_fraction_98: f64,
    pub train_loss: Vec<f64>,
}

impl TunnelReport {
    /// Extractor length at the 95% threshold, capped at the hidden depth.
    pub fn extractor_length(&self) -> usize {
        (self.tunnel_start_95.layer + 1).min(self.num_layers - 1)
    }

    pub fn last_hidden_rank(&self) -> Option<usize> {
        (self.num_layers >= 2).then(|| self.rank_curve[self.num_layers - 2])
    }
}

/// Measurements and boundary for `net`. Probes fit on `train` activations and
/// are scored on `eval`; rank, variance, drift and CKA use `eval`.
pub(crate) fn analyze(
    net: &Network,
    train: &Dataset,
    eval: &Dataset,
    reference_accuracy: f64,
    cfg: &ExperimentConfig,
) -> Result<TunnelReport> {
    let (train_acts, _) = net.forward_collect(&train.features)?;
    let (eval_acts, _) = net.forward_collect(&eval.features)?;
    let probe_curve = probe_curve_from_activations(
        &train_acts,
        &train.labels,
        &eval_acts,
        &eval.labels,
        train.num_classes,
        &cfg.effective_probe(),
        cfg.analysis.probe_runs,
    )?;
    let geometry = layer_geometry(&eval_acts, &eval.labels, eval.num_classes, cfg)?;
    let t95 = detect_tunnel(&probe_curve, reference_accuracy, 0.95)?;
    let t98 = detect_tunnel(&probe_curve, reference_accuracy, 0.98)?;
    let n = eval_acts.len();
    Ok(TunnelReport {
        num_layers: n,
        layer_widths: eval_acts.layers.iter().map(|m| m.ncols()).collect(),
        probe_curve,
        rank_curve: geometry.ranks,
        variance_curve: geometry.variance,
        l1_drift: geometry.drift,
        cka: geometry.cka,
        reference_accuracy,
        tunnel_start_95: t95,
        tunnel_start_98: t98,
        extractor_fraction_95: (t95.layer + 1) as f64 / n as f64,
        extractor_fraction_98: (t98.layer + 1) as f64 / n as f64,
        train_loss: Vec::new(),
    })
}

pub(crate) struct Geometry {
    pub ranks: Vec<usize>,
    pub variance: Vec<VarianceReport>,
    pub drift: Vec<Option<f64>>,
    pub cka: Option<CkaMatrix>,
}

pub(crate) fn layer_geometry(acts: &ActivationSet, labels: &[usize], classes: usize, cfg: &ExperimentConfig) -> Result<Geometry> {
    let policy = cfg.effective_spectrum();
    let ranks = par::try_map_range(acts.len(), |l| representation_rank(&acts.layers[l], &policy))?;
    let variance = par::try_map_range(acts.len(), |l| intra_inter_variance(&acts.layers[l], labels, classes))?;
    let drift = acts
        .layers
        .windows(2)
        .map(|w| {
            if w[0].dim() == w[1].dim() {
                let pair = ActivationSet { layers: w.to_vec() };
                l1_drift(&pair).map(|d| Some(d[0]))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cka = if cfg.analysis.compute_cka {
        Some(cka_matrix(acts, &cfg.effective_cka())?)
    } else {
        None
    };
    Ok(Geometry {
        ranks,
        variance,
        drift,
        cka,
    })
}

/// Report plus the training run that produced it.
#[derive(Debug, Clone)]
pub struct TunnelRun {
    pub report: TunnelReport,
    pub outcome: TrainOutcome,
}

pub(crate) fn train_fresh(spec: &NetworkSpec, train_data: &Dataset, test_data: &Dataset, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let net = init_network(spec, cfg.init_seed())?;
    train(&net, train_data, test_data, &cfg.effective_train())
}

/// Trains the configured backbone and measures every layer.
pub fn run_tunnel_experiment(cfg: &ExperimentConfig) -> Result<TunnelRun> {
    cfg.validate()?;
    let (train_data, test_data) = cfg.data.load()?;
    run_tunnel_on(&train_data, &test_data, cfg)
}

pub(crate) fn run_tunnel_on(train_data: &Dataset, test_data: &Dataset, cfg: &ExperimentConfig) -> Result<TunnelRun> {
    let spec = cfg.network.spec(train_data.dim(), train_data.num_classes)?;
    let outcome = train_fresh(&spec, train_data, test_data, cfg)?;
    let mut report = analyze(&outcome.network, train_data, test_data, outcome.test_accuracy, cfg)?;
    report.train_loss = outcome.epoch_losses.clone();
    Ok(TunnelRun { report, outcome })
}
