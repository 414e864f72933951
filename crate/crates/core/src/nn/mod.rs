//! Deterministic rectifier MLPs: construction, forward capture, training and
//! layer surgery.
//!
//! Weight matrices are stored `fan_in x fan_out` and applied as `x W + b`.
//! Parameters are generic over the scalar type; training runs in `f32`, and
//! the gradient check casts the same network to `f64`.

mod checkpoint;
mod grad;
mod surgery;
mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, precondition, Result};
use crate::linalg::Matrix;
use crate::seed;

pub use checkpoint::{decode_parameters, encode_parameters, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grad::{loss_and_gradients, mean_cross_entropy, softmax_rows};
pub use surgery::{reset_layers, stitch, truncate, weight_change_norm};
pub use train::{train, train_observed, Checkpoint, TrainConfig, TrainObserver, TrainOutcome};

/// Scalar types the network can be evaluated in.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + LinalgScalar
        + ScalarOperand
        + FromPrimitive
        + ToPrimitive
        + Sum
        + AddAssign
        + SubAssign
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Architecture of a rectifier MLP.
///
/// With `residual` set, every hidden layer after the first adds its input to
/// the pre-activation (identity skip), which requires equal hidden widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub residual: bool,
}

impl NetworkSpec {
    pub fn uniform(input_dim: usize, depth: usize, width: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: vec![width; depth],
            num_classes,
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(precondition(format!(
                "a classifier needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(precondition("all layer widths must be at least 1"));
        }
        if self.residual {
            if let Some(&first) = self.hidden_widths.first() {
                if self.hidden_widths.iter().any(|&w| w != first) {
                    return Err(precondition(
                        "residual networks need equal hidden widths",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Hidden layers plus the linear classifier.
    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// `(fan_in, fan_out)` of every layer, classifier last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, self.num_classes));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        let c = |v: &T| U::from_f64(v.to_f64().expect("finite")).expect("representable");
        Layer {
            weight: self.weight.map(c),
            bias: self.bias.map(c),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// A realised network. Value semantics: surgery and training return new
/// networks and never modify their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
    pub rng_seed: u64,
}

/// Per-layer representations of a batch, input side first; hidden entries are
/// post-rectifier outputs and the last entry holds the raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub layers: Vec<Matrix>,
}

impl ActivationSet {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn logits(&self) -> &Matrix {
        self.layers.last().expect("activation set has at least the logits")
    }
}

/// Uniform `[-a, a]` weights with `a = sqrt(6 / fan_in)` and zero biases.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network<f32>> {
    spec.validate()?;
    let mut layers = Vec::with_capacity(spec.num_layers());
    for (index, (fan_in, fan_out)) in spec.layer_shapes().into_iter().enumerate() {
        let mut rng = seed::derived_rng(seed, "init", index as u64);
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            rng.random_range(-bound..=bound)
        });
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
        rng_seed: seed,
    })
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows<T: PartialOrd + Copy>(m: ArrayView2<T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn relu_in_place<T: Real>(z: &mut Array2<T>) {
    z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

impl<T: Real> Network<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            rng_seed: self.rng_seed,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    /// Checks that the parameter shapes agree with the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(dimension(format!(
                "spec has {} layers, network has {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, &(fi, fo))) in self.layers.iter().zip(&shapes).enumerate() {
            if layer.shape() != (fi, fo) || layer.bias.len() != fo {
                return Err(dimension(format!(
                    "layer {i} is {:?}, spec expects {fi}x{fo}",
                    layer.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim {
            return Err(dimension(format!(
                "batch has {cols} features, network expects {}",
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Outputs of every layer for `x`; hidden outputs are post-rectifier.
    pub fn forward_trace(&self, x: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut outputs: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = match outputs.last() {
                Some(prev) => prev.view(),
                None => x,
            };
            let mut z = input.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                if self.spec.residual && i > 0 {
                    z += &input;
                }
                relu_in_place(&mut z);
            }
            outputs.push(z);
        }
        Ok(outputs)
    }

    pub fn logits(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward_trace(x)?.pop().expect("at least one layer"))
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    /// Converts `batch` to the network scalar, runs it, and returns every
    /// layer's output as `f64` together with the predicted classes.
    pub fn forward_collect(&self, batch: &Matrix) -> Result<(ActivationSet, Vec<usize>)> {
        self.check_input(batch.ncols())?;
        let x = batch.mapv(|v| T::from_f64(v).expect("representable"));
        let outputs = self.forward_trace(x.view())?;
        let predictions = argmax_rows(outputs.last().expect("logits").view());
        let layers = outputs
            .iter()
            .map(|m| m.mapv(|v| v.to_f64().expect("finite")))
            .collect();
        Ok((ActivationSet { layers }, predictions))
    }

    /// Fraction of `labels` matched by the network's argmax prediction.
    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        if features.nrows() != labels.len() {
            return Err(dimension(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(precondition("accuracy of an empty evaluation set"));
        }
        let x = features.mapv(|v| T::from_f64(v).expect("representable"));
        let predictions = self.predict(x.view())?;
        let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Same hidden stack with `head` as the classifier; the spec's class
    /// count follows the head width.
    pub fn with_head(&self, head: &Layer<T>) -> Result<Network<T>> {
        let hidden_out = self
            .spec
            .hidden_widths
            .last()
            .copied()
            .unwrap_or(self.spec.input_dim);
        if head.weight.nrows() != hidden_out || head.bias.len() != head.weight.ncols() {
            return Err(dimension(format!(
                "head of shape {:?} does not fit a {hidden_out}-wide body",
                head.shape()
            )));
        }
        let mut out = self.clone();
        out.spec.num_classes = head.weight.ncols();
        *out.layers.last_mut().expect("classifier layer") = head.clone();
        out.spec.validate()?;
        Ok(out)
    }

    pub fn head(&self) -> &Layer<T> {
        self.layers.last().expect("classifier layer")
    }
}
