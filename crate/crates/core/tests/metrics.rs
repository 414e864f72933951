mod common;

use common::*;
use ndarray::{array, Array2};
use proptest::prelude::*;
use tunnelscope::metrics::{cka, cka_matrix, hsic_unbiased, intra_inter_variance, l1_drift, CkaConfig, GramMatrix};
use tunnelscope::nn::ActivationSet;

fn full_batch(rows: usize) -> CkaConfig {
    CkaConfig {
        batch_size: rows,
        ..CkaConfig::default()
    }
}

fn rotation(dim: usize, seed: u64) -> Array2<f64> {
    orthonormal_columns(gaussian(dim, dim, &mut rng(seed)))
}

#[test]
fn hsic_matches_u_statistic_oracle() {
    let mut r = rng(21);
    for n in 4..=12 {
        for _ in 0..3 {
            let x = gaussian(n, 5, &mut r);
            let y = gaussian(n, 3, &mut r);
            let k = GramMatrix::linear(x.view());
            let l = GramMatrix::linear(y.view());
            let got = hsic_unbiased(&k, &l).unwrap();
            let want = hsic_u_statistic(k.values(), l.values());
            assert!(close_rel(got, want, 1e-10, 1e-12), "n={n}: {got} vs {want}");
        }
    }
}

#[test]
fn hsic_is_symmetric_in_its_kernels() {
    let mut r = rng(22);
    let k = GramMatrix::linear(gaussian(9, 4, &mut r).view());
    let l = GramMatrix::linear(gaussian(9, 4, &mut r).view());
    let a = hsic_unbiased(&k, &l).unwrap();
    let b = hsic_unbiased(&l, &k).unwrap();
    assert!(close_rel(a, b, 1e-12, 1e-15));
}

#[test]
fn gram_matrix_rejects_asymmetry() {
    assert!(GramMatrix::new(array![[1.0, 2.0], [0.0, 1.0]]).is_err());
}

#[test]
fn single_batch_cka_matches_oracle() {
    let mut r = rng(23);
    let x = gaussian(12, 6, &mut r);
    let y = gaussian(12, 4, &mut r);
    let got = cka(&x, &y, &full_batch(12)).unwrap();
    assert!(close_rel(got, cka_single_batch(&x, &y), 1e-9, 1e-12));
}

#[test]
fn cka_self_similarity_is_one() {
    let mut r = rng(24);
    for rows in [8, 40, 300] {
        let x = gaussian(rows, 7, &mut r);
        let v = cka(&x, &x, &CkaConfig::default()).unwrap();
        assert!((v - 1.0).abs() <= 1e-6, "{rows}: {v}");
    }
}

#[test]
fn cka_invariant_to_rotation_and_isotropic_scaling() {
    let mut r = rng(25);
    let x = gaussian(200, 6, &mut r);
    let y = x.slice(ndarray::s![.., ..5]).to_owned() + gaussian(200, 5, &mut r).mapv(f64::tanh);
    let cfg = CkaConfig {
        batch_size: 64,
        ..CkaConfig::default()
    };
    let base = cka(&x, &y, &cfg).unwrap();
    let xr = matmul(&x, &rotation(6, 1)) * 3.5;
    let yr = matmul(&y, &rotation(5, 2)) * 0.2;
    let moved = cka(&xr, &yr, &cfg).unwrap();
    assert!((base - moved).abs() <= 1e-6, "{base} vs {moved}");
}

#[test]
fn constant_representation_is_degenerate() {
    let x = Array2::from_elem((20, 3), 2.0);
    let y = gaussian(20, 3, &mut rng(26));
    assert!(cka(&x, &y, &full_batch(20)).is_err());
    let acts = ActivationSet { layers: vec![y.clone(), x] };
    let m = cka_matrix(&acts, &full_batch(20)).unwrap();
    assert!(m.get(0, 0).is_some());
    assert_eq!(m.get(0, 1), None);
    assert_eq!(m.get(1, 1), None);
}

#[test]
fn cka_matrix_is_symmetric_with_unit_diagonal() {
    let mut r = rng(27);
    let a = gaussian(64, 5, &mut r);
    let b = a.mapv(|v| v.max(0.0));
    let c = gaussian(64, 8, &mut r);
    let acts = ActivationSet { layers: vec![a, b, c] };
    let m = cka_matrix(&acts, &CkaConfig::default()).unwrap();
    for i in 0..3 {
        assert!((m.get(i, i).unwrap() - 1.0).abs() <= 1e-9);
        for j in 0..3 {
            assert!((m.get(i, j).unwrap() - m.get(j, i).unwrap()).abs() <= 1e-12);
        }
    }
}

#[test]
fn variance_hand_case() {
    let x = array![[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [10.0, 4.0]];
    let v = intra_inter_variance(&x, &[0, 0, 1, 1], 2).unwrap();
    // class spreads 1 and 4, means (1,0) and (10,2)
    assert!((v.intra - 2.5).abs() < 1e-12);
    assert!((v.inter - 85.0).abs() < 1e-12);
}

#[test]
fn variance_rejects_missing_class() {
    let x = array![[0.0], [1.0]];
    assert!(intra_inter_variance(&x, &[0, 0], 2).is_err());
    assert!(intra_inter_variance(&x, &[0, 5], 2).is_err());
}

#[test]
fn l1_drift_hand_case_and_width_error() {
    let a = array![[1.0, 2.0], [0.0, 0.0]];
    let b = array![[2.0, 0.0], [0.0, 1.0]];
    let d = l1_drift(&ActivationSet { layers: vec![a.clone(), b] }).unwrap();
    assert_eq!(d, vec![2.0]);
    let wide = Array2::zeros((2, 3));
    let err = l1_drift(&ActivationSet { layers: vec![a, wide] }).unwrap_err().to_string();
    assert!(err.contains("layers 0 and 1"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cka_bounded(seed in any::<u64>(), rows in 8usize..40, p in 1usize..6, q in 1usize..6) {
        let mut r = rng(seed);
        let x = gaussian(rows, p, &mut r);
        let y = gaussian(rows, q, &mut r);
        let v = cka(&x, &y, &full_batch(rows)).unwrap();
        prop_assert!(v <= 1.0 + 1e-9);
    }

    #[test]
    fn cka_symmetric(seed in any::<u64>(), rows in 8usize..40) {
        let mut r = rng(seed);
        let x = gaussian(rows, 3, &mut r);
        let y = gaussian(rows, 4, &mut r);
        let cfg = CkaConfig { batch_size: 8, drop_incomplete: false, ..CkaConfig::default() };
        prop_assert!((cka(&x, &y, &cfg).unwrap() - cka(&y, &x, &cfg).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn hsic_scales_bilinearly(seed in any::<u64>(), a in 0.1f64..10.0, b in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = gaussian(10, 3, &mut r);
        let y = gaussian(10, 3, &mut r);
        let k = GramMatrix::linear(x.view());
        let l = GramMatrix::linear(y.view());
        let ks = GramMatrix::new(k.values() * a).unwrap();
        let ls = GramMatrix::new(l.values() * b).unwrap();
        let base = hsic_unbiased(&k, &l).unwrap();
        let scaled = hsic_unbiased(&ks, &ls).unwrap();
        prop_assert!(close_rel(scaled, a * b * base, 1e-9, 1e-9 * a * b));
    }

    #[test]
    fn batches_partition_rows(rows in 4usize..300, batch in 4usize..64, drop in any::<bool>(), seed in any::<u64>()) {
        let cfg = CkaConfig { batch_size: batch, drop_incomplete: drop, seed, ..CkaConfig::default() };
        let b = cfg.batches(rows).unwrap();
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), total);
        prop_assert!(b.iter().all(|c| c.len() >= cfg.min_batch && c.len() <= batch.min(rows)));
        if !drop {
            prop_assert!(rows - total < cfg.min_batch);
        }
    }

    #[test]
    fn variance_nonnegative(seed in any::<u64>(), k in 2usize..5) {
        let mut r = rng(seed);
        let x = gaussian(6 * k, 3, &mut r);
        let labels: Vec<usize> = (0..6 * k).map(|i| i % k).collect();
        let v = intra_inter_variance(&x, &labels, k).unwrap();
        prop_assert!(v.intra >= 0.0 && v.inter >= 0.0);
    }
}
