//! Linear probes: softmax classifiers trained with Adam on frozen layer
//! activations, and per-layer probe-accuracy curves.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dimension, precondition, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{argmax_rows, softmax_rows, ActivationSet, Network};
use crate::{par, seed};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Capped at the number of training rows.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(precondition(format!(
                "probe learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(precondition("probe batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `features x classes`.
    pub weights: Matrix,
    pub bias: Array1<f64>,
}

impl Probe {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            weights: Array2::zeros((features, classes)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, acts: ArrayView2<f64>) -> Result<Matrix> {
        if acts.ncols() != self.weights.nrows() {
            return Err(dimension(format!(
                "probe expects {} features, got {}",
                self.weights.nrows(),
                acts.ncols()
            )));
        }
        Ok(acts.dot(&self.weights) + &self.bias)
    }

    pub fn predict(&self, acts: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(acts)?.view()))
    }
}

fn check_labels(acts: &Matrix, labels: &[usize], classes: usize) -> Result<()> {
    if acts.nrows() != labels.len() {
        return Err(dimension(format!(
            "{} activation rows but {} labels",
            acts.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(precondition(format!("label {bad} outside [0, {classes})")));
    }
    if acts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe activations".into()));
    }
    Ok(())
}

struct Adam {
    m_w: Matrix,
    v_w: Matrix,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
    t: i32,
}

impl Adam {
    fn new(features: usize, classes: usize) -> Self {
        Self {
            m_w: Array2::zeros((features, classes)),
            v_w: Array2::zeros((features, classes)),
            m_b: Array1::zeros(classes),
            v_b: Array1::zeros(classes),
            t: 0,
        }
    }

    fn step(&mut self, probe: &mut Probe, g_w: &Matrix, g_b: &Array1<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        ndarray::Zip::from(&mut probe.weights)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(g_w)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
        ndarray::Zip::from(&mut probe.bias)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(g_b)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
    }
}

/// Zero-initialised softmax probe fitted by Adam on mini-batches of a seeded
/// per-epoch shuffle; the last batch of an epoch may be smaller.
pub fn train_probe(acts: &Matrix, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<Probe> {
    cfg.validate()?;
    if num_classes < 1 {
        return Err(precondition("probe needs at least one class"));
    }
    check_labels(acts, labels, num_classes)?;
    let (n, p) = acts.dim();
    let mut probe = Probe::zeros(p, num_classes);
    if n == 0 {
        return Ok(probe);
    }
    let mut adam = Adam::new(p, num_classes);
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::derived_rng(cfg.seed, "probe-shuffle", epoch as u64));
        for idx in order.chunks(batch) {
            let xb = acts.select(Axis(0), idx);
            let mut delta = softmax_rows((xb.dot(&probe.weights) + &probe.bias).view());
            let scale = 1.0 / idx.len() as f64;
            for (mut row, &i) in delta.rows_mut().into_iter().zip(idx) {
                row[labels[i]] -= 1.0;
                row *= scale;
            }
            let g_w = xb.t().dot(&delta);
            let g_b = delta.sum_axis(Axis(0));
            adam.step(&mut probe, &g_w, &g_b, cfg.learning_rate);
        }
    }
    Ok(probe)
}

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
pub fn probe_accuracy(probe: &Probe, acts: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(precondition("accuracy of an empty evaluation set"));
    }
    if acts.nrows() != labels.len() {
        return Err(dimension(format!(
            "{} activation rows but {} labels",
            acts.nrows(),
            labels.len()
        )));
    }
    let hits = probe
        .predict(acts.view())?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-layer probe accuracies; `std` is the population deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: usize,
    /// `[layer][run]`.
    pub accuracies: Vec<Vec<f64>>,
}

impl ProbeCurve {
    pub fn from_runs(accuracies: Vec<Vec<f64>>) -> Self {
        let runs = accuracies.first().map_or(0, Vec::len);
        let (mean, std) = accuracies
            .iter()
            .map(|acc| {
                let n = acc.len() as f64;
                let m = acc.iter().sum::<f64>() / n;
                let var = acc.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
                (m, var.sqrt())
            })
            .unzip();
        Self {
            mean,
            std,
            runs,
            accuracies,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

fn run_seed(base: u64, layer: usize, run: usize) -> u64 {
    seed::derive(seed::derive(base, "probe-layer", layer as u64), "probe-run", run as u64)
}

/// Probe curve over already captured activations. Layers are processed in
/// parallel and merged by index.
pub fn probe_curve_from_activations(
    train: &ActivationSet,
    train_labels: &[usize],
    test: &ActivationSet,
    test_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
    runs: usize,
) -> Result<ProbeCurve> {
    if runs == 0 {
        return Err(precondition("probe curve needs at least one run"));
    }
    if train.len() != test.len() {
        return Err(dimension("train and test activation sets differ in depth"));
    }
    let accuracies = par::try_map_range(train.len(), |layer| {
        (0..runs)
            .map(|run| {
                let run_cfg = ProbeConfig {
                    seed: run_seed(cfg.seed, layer, run),
                    ..cfg.clone()
                };
                let probe = train_probe(&train.layers[layer], train_labels, num_classes, &run_cfg)?;
                probe_accuracy(&probe, &test.layers[layer], test_labels)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(ProbeCurve::from_runs(accuracies))
}

/// Captures every layer of `net` on both datasets and probes each layer
/// `runs` times with derived seeds. The datasets may come from a class space
/// other than the network's own.
pub fn probe_curve(
    net: &Network,
    probe_train: &Dataset,
    probe_test: &Dataset,
    cfg: &ProbeConfig,
    runs: usize,
) -> Result<ProbeCurve> {
    if probe_train.num_classes != probe_test.num_classes {
        return Err(precondition(format!(
            "probe splits disagree on class count ({} vs {})",
            probe_train.num_classes, probe_test.num_classes
        )));
    }
    let (train_acts, _) = net.forward_collect(&probe_train.features)?;
    let (test_acts, _) = net.forward_collect(&probe_test.features)?;
    probe_curve_from_activations(
        &train_acts,
        &probe_train.labels,
        &test_acts,
        &probe_test.labels,
        probe_train.num_classes,
        cfg,
        runs,
    )
}
