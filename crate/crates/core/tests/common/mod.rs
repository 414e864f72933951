//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls into the library's numerical kernels: each oracle is a
//! direct, slow transcription of the defining formula.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tunnelscope::data::BlobSpec;
use tunnelscope::nn::{mean_cross_entropy, Layer, Network};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// `U diag(s) V^T` with orthonormal Gaussian factors and `s` in `[1, 3]`;
/// rank exactly `rank`, well separated from zero.
pub fn planted_rank(rows: usize, cols: usize, rank: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let u = orthonormal_columns(gaussian(rows, rank, rng));
    let v = orthonormal_columns(gaussian(cols, rank, rng));
    let s: Vec<f64> = (0..rank).map(|_| rng.random_range(1.0..3.0)).collect();
    Array2::from_shape_fn((rows, cols), |(i, j)| (0..rank).map(|k| u[[i, k]] * s[k] * v[[j, k]]).sum())
}

/// Modified Gram-Schmidt on the columns of `a`.
pub fn orthonormal_columns(mut a: Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    for j in 0..k {
        for p in 0..j {
            let dot: f64 = (0..n).map(|i| a[[i, j]] * a[[i, p]]).sum();
            for i in 0..n {
                a[[i, j]] -= dot * a[[i, p]];
            }
        }
        let norm = (0..n).map(|i| a[[i, j]] * a[[i, j]]).sum::<f64>().sqrt();
        for i in 0..n {
            a[[i, j]] /= norm;
        }
    }
    a
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// non-increasing.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let diag: f64 = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Singular values as square roots of the eigenvalues of the smaller Gram
/// matrix, sorted non-increasing.
pub fn gram_singular_values(a: &Array2<f64>) -> Vec<f64> {
    let (r, c) = a.dim();
    let k = r.min(c);
    let mut g = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            g[[i, j]] = if r <= c {
                (0..c).map(|t| a[[i, t]] * a[[j, t]]).sum()
            } else {
                (0..r).map(|t| a[[t, i]] * a[[t, j]]).sum()
            };
        }
    }
    jacobi_eigenvalues(&g).into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Characteristic-polynomial coefficients `[1, c_1, .., c_n]` of `a` by the
/// Faddeev–LeVerrier recursion.
pub fn char_poly(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = Array2::<f64>::zeros((n, n));
    for k in 1..=n {
        let c_prev = *coeffs.last().expect("non-empty");
        for i in 0..n {
            m[[i, i]] += c_prev;
        }
        let am = matmul(a, &m);
        let trace: f64 = (0..n).map(|i| am[[i, i]]).sum();
        coeffs.push(-trace / k as f64);
        m = am;
    }
    coeffs
}

/// Real roots of a polynomial with only real roots, largest first, by Newton
/// iteration from an upper bound with synthetic-division deflation.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut p = coeffs.to_vec();
    let mut roots = Vec::new();
    while p.len() > 1 {
        let bound = 1.0 + p[1..].iter().map(|c| (c / p[0]).abs()).fold(0.0, f64::max);
        let mut x = bound;
        for _ in 0..500 {
            let (v, d) = eval_with_derivative(&p, x);
            if d == 0.0 {
                break;
            }
            let step = v / d;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        roots.push(x);
        let mut q = Vec::with_capacity(p.len() - 1);
        let mut acc = 0.0;
        for &c in &p[..p.len() - 1] {
            acc = acc * x + c;
            q.push(acc);
        }
        p = q;
    }
    roots
}

fn eval_with_derivative(p: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in p {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    Array2::from_shape_fn((n, m), |(i, j)| (0..k).map(|t| a[[i, t]] * b[[t, j]]).sum())
}

pub fn transpose(a: &Array2<f64>) -> Array2<f64> {
    a.t().to_owned()
}

/// Sample covariance, one entry at a time.
pub fn covariance_entrywise(x: &Array2<f64>) -> Array2<f64> {
    let (m, p) = x.dim();
    let means: Vec<f64> = (0..p).map(|j| (0..m).map(|i| x[[i, j]]).sum::<f64>() / m as f64).collect();
    Array2::from_shape_fn((p, p), |(a, b)| {
        (0..m).map(|i| (x[[i, a]] - means[a]) * (x[[i, b]] - means[b])).sum::<f64>() / (m as f64 - 1.0)
    })
}

/// Unbiased HSIC as a U-statistic over ordered 4-tuples of distinct indices.
/// Exact for symmetric kernels; cost is `O(n^4)`.
pub fn hsic_u_statistic(k: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let mut total = 0.0;
    let mut count = 0u64;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            for q in 0..n {
                if q == i || q == j {
                    continue;
                }
                for r in 0..n {
                    if r == i || r == j || r == q {
                        continue;
                    }
                    total += k[[i, j]] * l[[i, j]] + k[[i, j]] * l[[q, r]] - 2.0 * k[[i, j]] * l[[i, q]];
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Full-batch linear CKA written from HSIC of linear kernels.
pub fn cka_single_batch(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let k = matmul(x, &transpose(x));
    let l = matmul(y, &transpose(y));
    hsic_u_statistic(&k, &l) / (hsic_u_statistic(&k, &k) * hsic_u_statistic(&l, &l)).sqrt()
}

/// Accuracy of the exact Bayes classifier for a blob mixture: equal class
/// priors, modes equally likely within a class, isotropic noise.
pub fn blob_bayes_accuracy(spec: &BlobSpec, features: &Array2<f64>, labels: &[usize]) -> f64 {
    let centers = spec.centers();
    let var2 = 2.0 * spec.noise_std * spec.noise_std;
    let mut correct = 0usize;
    for (row, &label) in features.outer_iter().zip(labels) {
        let scores: Vec<f64> = centers
            .iter()
            .map(|modes| {
                let logs: Vec<f64> = modes
                    .iter()
                    .map(|c| -row.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / var2)
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                top + logs.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
            })
            .collect();
        let best = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .expect("classes");
        correct += usize::from(best == label);
    }
    correct as f64 / labels.len() as f64
}

/// Mean cross-entropy of `net` evaluated in f64.
pub fn loss_f64(net: &Network<f64>, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let logits = net.logits(x.view()).expect("forward");
    mean_cross_entropy(logits.view(), labels)
}

/// Central finite-difference gradients for every weight and bias.
pub fn finite_difference_gradients(net: &Network<f64>, x: &Array2<f64>, labels: &[usize], h: f64) -> Vec<Layer<f64>> {
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.layers.len());
    for li in 0..net.layers.len() {
        let (fan_in, fan_out) = net.layers[li].shape();
        let mut g = Layer::<f64>::zeros(fan_in, fan_out);
        for i in 0..fan_in {
            for j in 0..fan_out {
                let orig = probe.layers[li].weight[[i, j]];
                probe.layers[li].weight[[i, j]] = orig + h;
                let up = loss_f64(&probe, x, labels);
                probe.layers[li].weight[[i, j]] = orig - h;
                let down = loss_f64(&probe, x, labels);
                probe.layers[li].weight[[i, j]] = orig;
                g.weight[[i, j]] = (up - down) / (2.0 * h);
            }
        }
        for j in 0..fan_out {
            let orig = probe.layers[li].bias[j];
            probe.layers[li].bias[j] = orig + h;
            let up = loss_f64(&probe, x, labels);
            probe.layers[li].bias[j] = orig - h;
            let down = loss_f64(&probe, x, labels);
            probe.layers[li].bias[j] = orig;
            g.bias[j] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `|a - b| <= rel * max(|a|, |b|, floor)`.
pub fn close_rel(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}
