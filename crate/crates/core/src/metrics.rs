//! Representation geometry: unbiased HSIC, minibatch linear CKA, class
//! variance ratios, layer-to-layer L1 drift and representation rank.
//!
//! CKA values come from an unbiased estimator and may leave `[0, 1]`
//! slightly; they are reported unclamped.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, precondition, Error, Result};
use crate::linalg::{numerical_rank, Matrix, SpectrumPolicy};
use crate::nn::ActivationSet;
use crate::{par, seed};

/// Relative size below which a self-HSIC is treated as zero.
const DEGENERATE_TOL: f64 = 1e-10;

/// Symmetric kernel matrix of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Matrix,
}

impl GramMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(dimension(format!("Gram matrix must be square, got {r}x{c}")));
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..r {
            for j in (i + 1)..r {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-9 * scale {
                    return Err(precondition(format!("Gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { values })
    }

    /// Linear kernel `X X^T`.
    pub fn linear(x: ArrayView2<f64>) -> Self {
        Self { values: x.dot(&x.t()) }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// HSIC value and the summed magnitude of its three terms, both scaled by
/// `1/(n(n-3))`.
fn hsic_parts(k: &Matrix, l: &Matrix) -> (f64, f64) {
    let n = k.nrows();
    let nf = n as f64;
    let mut trace = 0.0;
    let mut sum_k = 0.0;
    let mut sum_l = 0.0;
    let mut col_k = vec![0.0; n];
    let mut row_l = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let kij = k[[i, j]];
            let lij = l[[i, j]];
            trace += kij * l[[j, i]];
            sum_k += kij;
            sum_l += lij;
            col_k[j] += kij;
            row_l[i] += lij;
        }
    }
    let cross: f64 = col_k.iter().zip(&row_l).map(|(a, b)| a * b).sum();
    let t2 = sum_k * sum_l / ((nf - 1.0) * (nf - 2.0));
    let t3 = 2.0 / (nf - 2.0) * cross;
    let norm = 1.0 / (nf * (nf - 3.0));
    (
        norm * (trace + t2 - t3),
        norm * (trace.abs() + t2.abs() + t3.abs()),
    )
}

/// Unbiased HSIC estimator with diagonals of both kernels removed.
pub fn hsic_unbiased(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    if k.n() != l.n() {
        return Err(dimension(format!("Gram sizes differ: {} vs {}", k.n(), l.n())));
    }
    if k.n() < 4 {
        return Err(precondition(format!("unbiased HSIC needs n >= 4, got {}", k.n())));
    }
    Ok(hsic_parts(&k.values, &l.values).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CkaConfig {
    pub batch_size: usize,
    pub min_batch: usize,
    pub drop_incomplete: bool,
    pub seed: u64,
}

impl Default for CkaConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            min_batch: 4,
            drop_incomplete: true,
            seed: 0,
        }
    }
}

impl CkaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_batch < 4 {
            return Err(precondition("min_batch must be at least 4"));
        }
        if self.batch_size < self.min_batch {
            return Err(precondition(format!(
                "batch_size {} below min_batch {}",
                self.batch_size, self.min_batch
            )));
        }
        Ok(())
    }

    /// Row indices of each minibatch for `rows` samples: a seeded shuffle cut
    /// into consecutive chunks of `min(batch_size, rows)`.
    pub fn batches(&self, rows: usize) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        if rows < self.min_batch {
            return Err(precondition(format!(
                "CKA needs at least {} rows, got {rows}",
                self.min_batch
            )));
        }
        let size = self.batch_size.min(rows);
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut seed::derived_rng(self.seed, "cka-batches", rows as u64));
        Ok(order
            .chunks(size)
            .filter(|c| c.len() == size || (!self.drop_incomplete && c.len() >= self.min_batch))
            .map(<[usize]>::to_vec)
            .collect())
    }
}

struct LayerGrams {
    grams: Vec<Matrix>,
    self_hsic: f64,
    magnitude: f64,
}

impl LayerGrams {
    fn build(x: &Matrix, batches: &[Vec<usize>]) -> Self {
        let grams: Vec<Matrix> = batches
            .iter()
            .map(|b| {
                let xb = x.select(Axis(0), b);
                xb.dot(&xb.t())
            })
            .collect();
        let (sum, mag) = grams
            .iter()
            .map(|g| hsic_parts(g, g))
            .fold((0.0, 0.0), |(s, m), (v, a)| (s + v, m + a));
        let k = grams.len() as f64;
        Self {
            grams,
            self_hsic: sum / k,
            magnitude: mag / k,
        }
    }

    fn degenerate(&self) -> bool {
        self.self_hsic.is_nan() || self.self_hsic <= DEGENERATE_TOL * self.magnitude
    }
}

fn cka_from_grams(a: &LayerGrams, b: &LayerGrams) -> Result<f64> {
    if a.degenerate() || b.degenerate() {
        return Err(Error::Degenerate(
            "a representation has zero self-HSIC; CKA is undefined".into(),
        ));
    }
    let cross: f64 = a
        .grams
        .iter()
        .zip(&b.grams)
        .map(|(k, l)| hsic_parts(k, l).0)
        .sum::<f64>()
        / a.grams.len() as f64;
    Ok(cross / (a.self_hsic.sqrt() * b.self_hsic.sqrt()))
}

/// Minibatch linear CKA: mean cross-HSIC over batches divided by the product
/// of square roots of the mean self-HSICs.
pub fn cka(x: &Matrix, y: &Matrix, cfg: &CkaConfig) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(dimension(format!(
            "CKA inputs differ in rows: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let batches = cfg.batches(x.nrows())?;
    cka_from_grams(&LayerGrams::build(x, &batches), &LayerGrams::build(y, &batches))
}

/// Layer-by-layer CKA on a shared batch assignment. Degenerate pairs are
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub values: Vec<Vec<Option<f64>>>,
}

impl CkaMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean of the defined entries `(i, j)` with `i != j` drawn from the two
    /// index sets.
    pub fn block_mean(&self, rows: &[usize], cols: &[usize]) -> Option<f64> {
        let vals: Vec<f64> = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .filter(|(i, j)| i != j)
            .filter_map(|(i, j)| self.values[i][j])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn cka_matrix(acts: &ActivationSet, cfg: &CkaConfig) -> Result<CkaMatrix> {
    let layers = acts.len();
    if layers == 0 {
        return Err(precondition("CKA matrix of an empty activation set"));
    }
    let rows = acts.rows();
    if acts.layers.iter().any(|m| m.nrows() != rows) {
        return Err(dimension("activation layers differ in row count"));
    }
    let batches = cfg.batches(rows)?;
    let grams = par::map_range(layers, |i| LayerGrams::build(&acts.layers[i], &batches));
    let pairs: Vec<(usize, usize)> = (0..layers)
        .flat_map(|i| (i..layers).map(move |j| (i, j)))
        .collect();
    let entries = par::map_slice(&pairs, |&(i, j)| cka_from_grams(&grams[i], &grams[j]).ok());
    let mut values = vec![vec![None; layers]; layers];
    for (&(i, j), v) in pairs.iter().zip(entries) {
        values[i][j] = v;
        values[j][i] = v;
    }
    Ok(CkaMatrix { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub intra: f64,
    pub inter: f64,
}

/// Mean within-class squared spread and mean squared distance between
/// distinct class means.
pub fn intra_inter_variance(acts: &Matrix, labels: &[usize], num_classes: usize) -> Result<VarianceReport> {
    if acts.nrows() != labels.len() {
        return Err(dimension(format!(
            "{} activation rows but {} labels",
            acts.nrows(),
            labels.len()
        )));
    }
    if num_classes < 2 {
        return Err(precondition("inter-class variance needs at least 2 classes"));
    }
    let p = acts.ncols();
    let mut sums = Matrix::zeros((num_classes, p));
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in acts.rows().into_iter().zip(labels) {
        if l >= num_classes {
            return Err(precondition(format!("label {l} outside [0, {num_classes})")));
        }
        counts[l] += 1;
        let mut s = sums.row_mut(l);
        s += &row;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(precondition(format!("class {missing} has no samples")));
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        s /= c as f64;
    }
    let means = sums;
    let mut spread = vec![0.0; num_classes];
    for (row, &l) in acts.rows().into_iter().zip(labels) {
        spread[l] += row
            .iter()
            .zip(means.row(l))
            .map(|(a, m)| (a - m) * (a - m))
            .sum::<f64>();
    }
    let c = num_classes as f64;
    let intra = spread.iter().zip(&counts).map(|(s, &t)| s / t as f64).sum::<f64>() / c;
    let mut inter = 0.0;
    for j in 0..num_classes {
        for k in 0..num_classes {
            if j != k {
                inter += means
                    .row(j)
                    .iter()
                    .zip(means.row(k))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
    }
    inter /= c * (c - 1.0);
    Ok(VarianceReport { intra, inter })
}

/// Entry `l` is the mean over samples of `||a_{l+1} - a_l||_1`.
pub fn l1_drift(acts: &ActivationSet) -> Result<Vec<f64>> {
    acts.layers
        .windows(2)
        .enumerate()
        .map(|(l, pair)| {
            let (a, b) = (&pair[0], &pair[1]);
            if a.dim() != b.dim() {
                return Err(dimension(format!(
                    "layers {l} and {} have shapes {:?} and {:?}",
                    l + 1,
                    a.dim(),
                    b.dim()
                )));
            }
            if a.nrows() == 0 {
                return Err(precondition("L1 drift of zero samples"));
            }
            let total: f64 = a.iter().zip(b.iter()).map(|(x, y)| (y - x).abs()).sum();
            Ok(total / a.nrows() as f64)
        })
        .collect()
}

pub fn representation_rank(acts: &Matrix, policy: &SpectrumPolicy) -> Result<usize> {
    numerical_rank(acts.view(), policy)
}
