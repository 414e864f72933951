mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use tunnelscope::data::{
    class_subset, load_csv, make_blobs, ood_pair, save_csv, split_tasks, standardize_pair, BlobSpec, Dataset, Standardizer,
};
use tunnelscope::nn::ActivationSet;
use tunnelscope::probes::{probe_accuracy, probe_curve_from_activations, train_probe, ProbeConfig, ProbeCurve};

fn small_blobs(seed: u64) -> BlobSpec {
    BlobSpec {
        num_classes: 4,
        dim: 5,
        per_class_train: 40,
        per_class_test: 20,
        modes_per_class: 2,
        seed,
        ..BlobSpec::default()
    }
}

#[test]
fn blobs_are_seeded_and_balanced() {
    let spec = small_blobs(3);
    let (tr, te) = make_blobs(&spec).unwrap();
    assert_eq!(make_blobs(&spec).unwrap().0, tr);
    assert_ne!(make_blobs(&small_blobs(4)).unwrap().0, tr);
    assert_eq!(tr.class_counts(), vec![40; 4]);
    assert_eq!(te.class_counts(), vec![20; 4]);
    assert_eq!(tr.dim(), 5);
}

#[test]
fn task_split_relabels_from_zero() {
    let (tr, _) = make_blobs(&small_blobs(5)).unwrap();
    let tasks = split_tasks(&tr, &[vec![0, 1], vec![2, 3]]).unwrap();
    assert_eq!(tasks.len(), 2);
    for t in &tasks {
        assert_eq!(t.num_classes, 2);
        assert_eq!(t.class_counts(), vec![40, 40]);
    }
    assert!(split_tasks(&tr, &[vec![0, 1], vec![1, 2]]).is_err());
    assert_eq!(class_subset(&tr, &[2, 3]).unwrap().features, tasks[1].features);
}

#[test]
fn ood_pair_refuses_identical_specs() {
    let s = small_blobs(6);
    assert!(ood_pair(&s, &s).is_err());
    let ((a, _), (b, _)) = ood_pair(&s, &small_blobs(7)).unwrap();
    assert_ne!(a.features, b.features);
}

#[test]
fn standardizer_zero_mean_unit_variance() {
    let (tr, te) = make_blobs(&small_blobs(8)).unwrap();
    let (s_tr, _) = standardize_pair(&tr, &te).unwrap();
    let m = s_tr.len() as f64;
    for col in s_tr.features.columns() {
        let mean = col.sum() / m;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
    let constant = Array2::from_elem((4, 2), 3.0);
    let s = Standardizer::fit(&constant).unwrap();
    let d = Dataset::new(constant, vec![0, 1, 0, 1], 2, "c").unwrap();
    assert!(s.apply(&d).unwrap().features.iter().all(|v| *v == 0.0));
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "0,0.5,1.0\n1,0.1,oops\n").unwrap();
    let err = load_csv(&p, 2).unwrap_err().to_string();
    assert!(err.contains(":2:"), "{err}");
    std::fs::write(&p, "0,0.5,1.0\n1,0.1\n").unwrap();
    assert!(load_csv(&p, 2).is_err());
    std::fs::write(&p, "7,0.5,1.0\n").unwrap();
    assert!(load_csv(&p, 2).is_err());
}

#[test]
fn probe_separates_linearly_separable_data() {
    let mut r = rng(31);
    let x = gaussian(200, 4, &mut r);
    let labels: Vec<usize> = x.rows().into_iter().map(|row| usize::from(row[0] + 0.5 * row[1] > 0.0)).collect();
    let cfg = ProbeConfig {
        learning_rate: 0.05,
        epochs: 100,
        batch_size: 32,
        seed: 1,
    };
    let probe = train_probe(&x, &labels, 2, &cfg).unwrap();
    assert!(probe_accuracy(&probe, &x, &labels).unwrap() >= 0.97);
}

#[test]
fn probe_on_constant_features_is_at_most_majority() {
    let x = Array2::from_elem((30, 3), 1.0);
    let labels: Vec<usize> = (0..30).map(|i| usize::from(i < 20)).collect();
    let probe = train_probe(&x, &labels, 2, &ProbeConfig::default()).unwrap();
    assert!(probe_accuracy(&probe, &x, &labels).unwrap() <= 20.0 / 30.0 + 1e-12);
}

#[test]
fn probe_curve_is_independent_of_thread_count() {
    let mut r = rng(32);
    let layers: Vec<Array2<f64>> = (0..4).map(|_| gaussian(60, 6, &mut r)).collect();
    let acts = ActivationSet { layers };
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let cfg = ProbeConfig {
        epochs: 5,
        ..ProbeConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| probe_curve_from_activations(&acts, &labels, &acts, &labels, 3, &cfg, 2).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn probe_curve_statistics() {
    let c = ProbeCurve::from_runs(vec![vec![0.5, 0.7], vec![1.0, 1.0]]);
    assert_eq!(c.mean, vec![0.6, 1.0]);
    assert!((c.std[0] - 0.1).abs() < 1e-12);
    assert_eq!(c.std[1], 0.0);
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..12, 1usize..5, 2usize..4).prop_flat_map(|(rows, cols, k)| {
        (
            prop::collection::vec(-1e6f64..1e6, rows * cols),
            prop::collection::vec(0..k, rows),
        )
            .prop_map(move |(v, l)| Dataset::new(Array2::from_shape_vec((rows, cols), v).unwrap(), l, k, "p").unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_within_tolerance(d in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&d, &p).unwrap();
        let back = load_csv(&p, d.num_classes).unwrap();
        prop_assert_eq!(&back.labels, &d.labels);
        for (a, b) in back.features.iter().zip(d.features.iter()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn probe_accuracy_in_unit_interval(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian(24, 3, &mut r);
        let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let cfg = ProbeConfig { epochs: 3, seed, ..ProbeConfig::default() };
        let a = probe_accuracy(&train_probe(&x, &labels, 3, &cfg).unwrap(), &x, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn standardizer_is_affine_invariant(seed in any::<u64>(), scale in 0.1f64..50.0, shift in -20.0f64..20.0) {
        let x = gaussian(15, 3, &mut rng(seed));
        let y = x.mapv(|v| v * scale + shift);
        let labels = vec![0; 15];
        let a = Standardizer::fit(&x).unwrap().apply(&Dataset::new(x, labels.clone(), 1, "a").unwrap()).unwrap();
        let b = Standardizer::fit(&y).unwrap().apply(&Dataset::new(y, labels, 1, "b").unwrap()).unwrap();
        for (u, v) in a.features.iter().zip(b.features.iter()) {
            prop_assert!((u - v).abs() <= 1e-8);
        }
    }
}
