use std::ops::Range;

use super::{Checkpoint, Layer, Network, NetworkSpec};
use crate::error::{dimension, precondition, Result};

fn same_shapes(a: &[Layer<f32>], b: &[Layer<f32>]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.shape() == y.shape() && x.bias.len() == y.bias.len())
}

/// `(1/sqrt(|W|)) * ||W_a - W_b||_2` for the weight matrix of `layer`;
/// biases are not included.
pub fn weight_change_norm(a: &Checkpoint, b: &Checkpoint, layer: usize) -> Result<f64> {
    if !same_shapes(&a.layers, &b.layers) {
        return Err(dimension("checkpoints come from different architectures"));
    }
    let (wa, wb) = match (a.layers.get(layer), b.layers.get(layer)) {
        (Some(x), Some(y)) => (&x.weight, &y.weight),
        _ => {
            return Err(precondition(format!(
                "layer {layer} out of range for {} layers",
                a.layers.len()
            )))
        }
    };
    let sq: f64 = wa
        .iter()
        .zip(wb.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt() / (wa.len() as f64).sqrt())
}

/// Copy of `net` whose layers in `range` hold the parameters of `init`.
pub fn reset_layers(net: &Network, init: &Checkpoint, range: Range<usize>) -> Result<Network> {
    if !same_shapes(&net.layers, &init.layers) {
        return Err(dimension("checkpoint does not match the network architecture"));
    }
    if range.start > range.end || range.end > net.layers.len() {
        return Err(precondition(format!(
            "reset range {range:?} invalid for {} layers",
            net.layers.len()
        )));
    }
    let mut out = net.clone();
    for i in range {
        out.layers[i] = init.layers[i].clone();
    }
    Ok(out)
}

/// Layers `[0, split)` from `bottom` and `[split, n)` from `top`.
pub fn stitch(bottom: &Network, top: &Network, split: usize) -> Result<Network> {
    if bottom.spec != top.spec {
        return Err(precondition("stitching needs identical network specs"));
    }
    let n = bottom.layers.len();
    if split > n {
        return Err(precondition(format!("split {split} outside [0, {n}]")));
    }
    let mut out = top.clone();
    out.layers[..split].clone_from_slice(&bottom.layers[..split]);
    if split == n {
        out.rng_seed = bottom.rng_seed;
    }
    Ok(out)
}

/// Spec keeping the first `depth` hidden layers and the same head width.
pub fn truncate(spec: &NetworkSpec, depth: usize) -> Result<NetworkSpec> {
    if depth > spec.hidden_widths.len() {
        return Err(precondition(format!(
            "depth {depth} exceeds {} hidden layers",
            spec.hidden_widths.len()
        )));
    }
    let mut out = spec.clone();
    out.hidden_widths.truncate(depth);
    Ok(out)
}
