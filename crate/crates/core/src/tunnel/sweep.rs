use serde::{Deserialize, Serialize};

use super::{run_tunnel_on, ArchConfig, ExperimentConfig};
use crate::data::class_subset;
use crate::error::{Error, Result};
use crate::par;

/// Cartesian grid over hidden depth, width and class count. Class counts
/// select the first `k` classes of the configured data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub class_counts: Vec<usize>,
    /// Scale epochs so every cell takes as many optimiser steps as a cell
    /// with all classes.
    pub equalize_steps: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depths: vec![8, 12, 16],
            widths: vec![256],
            class_counts: vec![10],
            equalize_steps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub depth: usize,
    pub width: usize,
    pub classes: usize,
    pub epochs: usize,
    pub test_accuracy: f64,
    pub tunnel_start_95: usize,
    pub tunnel_start_98: usize,
    pub found_95: bool,
    pub found_98: bool,
    pub extractor_fraction_95: f64,
    pub extractor_fraction_98: f64,
    pub probe_mean: Vec<f64>,
    pub rank_curve: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, depth: usize, width: usize, classes: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.depth == depth && c.width == width && c.classes == classes)
    }
}

fn steps_per_epoch(rows: usize, batch: usize) -> usize {
    rows.div_ceil(batch).max(1)
}

/// One tunnel experiment per `(depth, width, classes)` cell; cells run
/// concurrently and are reported in grid order.
pub fn run_capacity_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let sweep = &cfg.sweep;
    if sweep.depths.is_empty() || sweep.widths.is_empty() || sweep.class_counts.is_empty() {
        return Err(Error::Config("sweep needs at least one depth, width and class count".into()));
    }
    let (train_data, test_data) = cfg.data.load()?;
    if let Some(&k) = sweep
        .class_counts
        .iter()
        .find(|&&k| k < 2 || k > train_data.num_classes)
    {
        return Err(Error::Config(format!(
            "sweep class count {k} outside [2, {}]",
            train_data.num_classes
        )));
    }
    let grid: Vec<(usize, usize, usize)> = sweep
        .depths
        .iter()
        .flat_map(|&d| {
            sweep
                .widths
                .iter()
                .flat_map(move |&w| sweep.class_counts.iter().map(move |&k| (d, w, k)))
        })
        .collect();
    let full_steps = steps_per_epoch(train_data.len(), cfg.train.batch_size);
    let cells = par::map_slice(&grid, |&(depth, width, classes)| -> Result<SweepCell> {
        let keep: Vec<usize> = (0..classes).collect();
        let train = class_subset(&train_data, &keep)?;
        let test = class_subset(&test_data, &keep)?;
        let mut cell_cfg = cfg.clone();
        cell_cfg.network = ArchConfig {
            depth,
            width,
            hidden_widths: None,
            ..cfg.network.clone()
        };
        if sweep.equalize_steps {
            let factor = full_steps as f64 / steps_per_epoch(train.len(), cfg.train.batch_size) as f64;
            let scale = |e: usize| (e as f64 * factor).round() as usize;
            cell_cfg.train.epochs = scale(cfg.train.epochs);
            cell_cfg.train.lr_decay_milestones = cfg.train.lr_decay_milestones.iter().map(|&m| scale(m)).collect();
        }
        let run = run_tunnel_on(&train, &test, &cell_cfg)?;
        let r = run.report;
        Ok(SweepCell {
            depth,
            width,
            classes,
            epochs: cell_cfg.train.epochs,
            test_accuracy: r.reference_accuracy,
            tunnel_start_95: r.tunnel_start_95.layer,
            tunnel_start_98: r.tunnel_start_98.layer,
            found_95: r.tunnel_start_95.found,
            found_98: r.tunnel_start_98.found,
            extractor_fraction_95: r.extractor_fraction_95,
            extractor_fraction_98: r.extractor_fraction_98,
            probe_mean: r.probe_curve.mean,
            rank_curve: r.rank_curve,
        })
    });
    Ok(SweepReport {
        cells: cells.into_iter().collect::<Result<_>>()?,
    })
}
