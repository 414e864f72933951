use ndarray::{Array2, ArrayView2, Axis};

use super::{Layer, Network, Real};
use crate::error::{dimension, precondition, Result};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows<T: Real>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total: T = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Mean softmax cross-entropy of `logits` against integer `labels`.
pub fn mean_cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> T {
    let mut total = T::zero();
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total += lse - row[label];
    }
    total / T::from_usize(labels.len()).expect("batch size fits")
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// every weight and bias. Weight decay is not included.
pub fn loss_and_gradients<T: Real>(
    net: &Network<T>,
    x: ArrayView2<T>,
    labels: &[usize],
) -> Result<(T, Vec<Layer<T>>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(precondition("gradient of an empty batch"));
    }
    if labels.len() != n {
        return Err(dimension(format!("{n} rows but {} labels", labels.len())));
    }
    let classes = net.spec.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(precondition(format!("label {bad} outside [0, {classes})")));
    }
    let outputs = net.forward_trace(x)?;
    let logits = outputs.last().expect("logits");
    let loss = mean_cross_entropy(logits.view(), labels);

    let scale = T::one() / T::from_usize(n).expect("batch size fits");
    let mut delta = softmax_rows(logits.view());
    for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
        row[label] -= T::one();
        row.mapv_inplace(|v| v * scale);
    }

    let last = net.layers.len() - 1;
    let mut grads: Vec<Layer<T>> = Vec::with_capacity(net.layers.len());
    for i in (0..=last).rev() {
        let input = if i == 0 { x } else { outputs[i - 1].view() };
        let layer = &net.layers[i];
        grads.push(Layer {
            weight: input.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        if i == 0 {
            break;
        }
        let mut upstream = delta.dot(&layer.weight.t());
        if net.spec.residual && i < last {
            upstream += &delta;
        }
        ndarray::Zip::from(&mut upstream)
            .and(&outputs[i - 1])
            .for_each(|g, &h| {
                if h <= T::zero() {
                    *g = T::zero();
                }
            });
        delta = upstream;
    }
    grads.reverse();
    Ok((loss, grads))
}
