use serde::{Deserialize, Serialize};

use super::{run_tunnel_on, ExperimentConfig, TunnelReport, TunnelRun};
use crate::data::{ood_pair, standardize_pair, BlobSpec};
use crate::error::{Error, Result};
use crate::linalg::SpectrumPolicy;
use crate::metrics::representation_rank;
use crate::par;
use crate::probes::{probe_curve_from_activations, ProbeCurve};

/// Target task for out-of-distribution probing. The default target is a
/// 10-class blob task with fresh centres; `null` probes the source task again
/// (sanity mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    pub target: Option<BlobSpec>,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            target: Some(BlobSpec {
                seed: 2,
                ..BlobSpec::default()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub in_distribution: TunnelReport,
    pub sanity_mode: bool,
    pub ood_probe_curve: ProbeCurve,
    /// Numerical rank of target-test activations.
    pub ood_rank_curve: Vec<usize>,
    /// Layer with the highest mean OOD probe accuracy (lowest on ties).
    pub ood_best_layer: usize,
}

#[derive(Debug, Clone)]
pub struct OodRun {
    pub report: OodReport,
    pub source: TunnelRun,
}

/// Trains on the source task, then probes every frozen layer on the target
/// task: probes fit on target-train and are scored on target-test.
pub fn run_ood_experiment(cfg: &ExperimentConfig) -> Result<OodRun> {
    cfg.validate()?;
    let (source, target, sanity_mode) = match &cfg.ood.target {
        Some(target) => {
            if cfg.data.train_csv.is_some() {
                return Err(Error::Config("OOD targets are blob tasks; use blob source data".into()));
            }
            let (src, tgt) = ood_pair(&cfg.data.blobs, target)?;
            let src = standardize_pair(&src.0, &src.1)?;
            let tgt = standardize_pair(&tgt.0, &tgt.1)?;
            (src, tgt, false)
        }
        None => {
            let src = cfg.data.load()?;
            (src.clone(), src, true)
        }
    };
    if source.0.dim() != target.0.dim() {
        return Err(Error::Config("OOD target must share the source feature dimension".into()));
    }
    let run = run_tunnel_on(&source.0, &source.1, cfg)?;
    let net = &run.outcome.network;
    let (train_acts, _) = net.forward_collect(&target.0.features)?;
    let (test_acts, _) = net.forward_collect(&target.1.features)?;
    let ood_probe_curve = probe_curve_from_activations(
        &train_acts,
        &target.0.labels,
        &test_acts,
        &target.1.labels,
        target.0.num_classes,
        &cfg.effective_probe(),
        cfg.analysis.probe_runs,
    )?;
    let policy: SpectrumPolicy = cfg.effective_spectrum();
    let ood_rank_curve = par::try_map_range(test_acts.len(), |l| representation_rank(&test_acts.layers[l], &policy))?;
    let ood_best_layer = ood_probe_curve
        .mean
        .iter()
        .enumerate()
        .fold(0, |best, (i, &a)| if a > ood_probe_curve.mean[best] { i } else { best });
    Ok(OodRun {
        report: OodReport {
            in_distribution: run.report.clone(),
            sanity_mode,
            ood_probe_curve,
            ood_rank_curve,
            ood_best_layer,
        },
        source: run,
    })
}
