//! Dense linear algebra for the representation metrics: sample covariance,
//! singular values and covariance-spectrum numerical rank.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, precondition, Result};
use crate::seed;

/// Row-major dense matrix; rows are samples, columns are features.
pub type Matrix = Array2<f64>;

/// Builds a matrix from row-major data, rejecting non-finite entries.
pub fn matrix_from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(dimension(format!(
            "{} values for a {rows}x{cols} matrix",
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite(format!(
            "entry ({}, {})",
            pos / cols.max(1),
            pos % cols.max(1)
        )));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| dimension(e.to_string()))
}

/// Thresholding rule for the numerical rank.
///
/// A singular value `s_i` of the covariance counts towards the rank when
/// `s_i > relative_threshold * s_1`. Inputs wider than `max_features` are
/// reduced to a seeded uniform column subsample first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumPolicy {
    pub relative_threshold: f64,
    pub max_features: usize,
    pub seed: u64,
}

impl Default for SpectrumPolicy {
    fn default() -> Self {
        Self {
            relative_threshold: 1e-3,
            max_features: 2048,
            seed: 0,
        }
    }
}

impl SpectrumPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_threshold > 0.0 && self.relative_threshold < 1.0) {
            return Err(precondition(format!(
                "relative_threshold must lie in (0, 1), got {}",
                self.relative_threshold
            )));
        }
        if self.max_features == 0 {
            return Err(precondition("max_features must be at least 1"));
        }
        Ok(())
    }
}

/// `(1/(m-1)) (X - mean)^T (X - mean)` with column means removed.
pub fn sample_covariance(x: ArrayView2<f64>) -> Result<Matrix> {
    let m = x.nrows();
    if m < 2 {
        return Err(precondition(format!(
            "sample covariance needs at least 2 rows, got {m}"
        )));
    }
    let centered = center_columns(x);
    let mut cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    symmetrize(&mut cov);
    Ok(cov)
}

fn center_columns(x: ArrayView2<f64>) -> Matrix {
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    &x - &mean
}

fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Singular values in non-increasing order; `min(rows, cols)` of them.
pub fn singular_values(m: ArrayView2<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(precondition("singular values of an empty matrix"));
    }
    let mut s: Vec<f64> = to_nalgebra(m)
        .singular_values()
        .iter()
        .map(|v| v.abs())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Spectrum of a symmetric positive semi-definite matrix, non-increasing.
/// Singular values and eigenvalues coincide here; rounding noise below zero
/// is folded back through `abs`.
fn psd_spectrum(a: &Matrix) -> Vec<f64> {
    let eig = to_nalgebra(a.view()).symmetric_eigenvalues();
    let mut s: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Non-zero part of the covariance spectrum. When there are fewer samples than
/// features the `m x m` centred Gram matrix is used instead of the `p x p`
/// covariance; both share their non-zero eigenvalues.
pub fn covariance_spectrum(x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let m = x.nrows();
    if m < 2 {
        return Err(precondition(format!(
            "covariance spectrum needs at least 2 rows, got {m}"
        )));
    }
    if x.ncols() == 0 {
        return Ok(Vec::new());
    }
    let centered = center_columns(x);
    let mut small = if m < x.ncols() {
        centered.dot(&centered.t())
    } else {
        centered.t().dot(&centered)
    };
    small /= m as f64 - 1.0;
    symmetrize(&mut small);
    Ok(psd_spectrum(&small))
}

/// Picks `policy.max_features` columns uniformly without replacement when
/// the input is wider than that; otherwise returns the input unchanged.
pub fn subsample_features(x: ArrayView2<f64>, policy: &SpectrumPolicy) -> Matrix {
    let p = x.ncols();
    if p <= policy.max_features {
        return x.to_owned();
    }
    let mut rng = seed::derived_rng(policy.seed, "rank-features", p as u64);
    let mut cols = index::sample(&mut rng, p, policy.max_features).into_vec();
    cols.sort_unstable();
    x.select(Axis(1), &cols)
}

/// Number of covariance singular values above `relative_threshold * s_1`.
pub fn numerical_rank(x: ArrayView2<f64>, policy: &SpectrumPolicy) -> Result<usize> {
    policy.validate()?;
    if x.nrows() < 2 {
        return Err(precondition(format!(
            "numerical rank needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    let reduced = subsample_features(x, policy);
    let spectrum = covariance_spectrum(reduced.view())?;
    Ok(rank_from_spectrum(&spectrum, policy.relative_threshold))
}

pub fn rank_from_spectrum(spectrum: &[f64], relative_threshold: f64) -> usize {
    match spectrum.first() {
        Some(&top) if top > 0.0 => {
            let cut = relative_threshold * top;
            spectrum.iter().filter(|&&s| s > cut).count()
        }
        _ => 0,
    }
}
