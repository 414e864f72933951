use proptest::prelude::*;
use serde_json::json;
use tunnelscope::config::{ExperimentKind, RunConfig};
use tunnelscope::probes::ProbeCurve;
use tunnelscope::tunnel::{
    detect_tunnel, run_capacity_sweep, run_ood_experiment, run_stitch_experiment, run_tunnel_experiment, ExperimentConfig,
};

fn tiny(extra: serde_json::Value) -> ExperimentConfig {
    let mut base = json!({
        "data": {"blobs": {"per_class_train": 40, "per_class_test": 20, "dim": 8}},
        "network": {"depth": 4, "width": 24},
        "train": {"epochs": 4, "batch_size": 32},
        "probe": {"epochs": 3},
        "analysis": {"probe_runs": 2},
        "cka": {"batch_size": 40},
        "ood": {"target": {"per_class_train": 40, "per_class_test": 20, "dim": 8, "seed": 2}}
    });
    merge(&mut base, extra);
    RunConfig::from_value(base, Some(ExperimentKind::Tunnel)).unwrap().experiment
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

#[test]
fn tunnel_report_shapes_and_consistency() {
    let cfg = tiny(json!({}));
    let r = run_tunnel_experiment(&cfg).unwrap().report;
    assert_eq!(r.num_layers, 5);
    assert_eq!(r.probe_curve.len(), 5);
    assert_eq!(r.rank_curve.len(), 5);
    assert_eq!(r.variance_curve.len(), 5);
    assert_eq!(r.l1_drift.len(), 4);
    assert!(r.tunnel_start_95.layer <= r.tunnel_start_98.layer);
    let expect = detect_tunnel(&r.probe_curve, r.reference_accuracy, 0.95).unwrap();
    assert_eq!(r.tunnel_start_95, expect);
    assert!((r.extractor_fraction_95 - (r.tunnel_start_95.layer + 1) as f64 / 5.0).abs() < 1e-12);
    assert_eq!(r.cka.as_ref().unwrap().len(), 5);
}

#[test]
fn tunnel_run_is_reproducible_and_seed_sensitive() {
    let a = run_tunnel_experiment(&tiny(json!({}))).unwrap().report;
    let b = run_tunnel_experiment(&tiny(json!({}))).unwrap().report;
    assert_eq!(a, b);
    let c = run_tunnel_experiment(&tiny(json!({"seed": 3}))).unwrap().report;
    assert_ne!(a.train_loss, c.train_loss);
}

#[test]
fn ood_sanity_mode_tracks_in_distribution_curve() {
    let cfg = tiny(json!({"ood": {"target": null}}));
    let r = run_ood_experiment(&cfg).unwrap().report;
    assert!(r.sanity_mode);
    for (a, b) in r.ood_probe_curve.mean.iter().zip(&r.in_distribution.probe_curve.mean) {
        assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }
}

#[test]
fn ood_default_target_differs_from_source() {
    let r = run_ood_experiment(&tiny(json!({}))).unwrap().report;
    assert!(!r.sanity_mode);
    assert_eq!(r.ood_probe_curve.len(), r.in_distribution.num_layers);
}

#[test]
fn sweep_cells_follow_grid_order() {
    let cfg = tiny(json!({"sweep": {"depths": [2, 3], "widths": [8], "class_counts": [3, 10]}}));
    let r = run_capacity_sweep(&cfg).unwrap();
    let keys: Vec<(usize, usize)> = r.cells.iter().map(|c| (c.depth, c.classes)).collect();
    assert_eq!(keys, vec![(2, 3), (2, 10), (3, 3), (3, 10)]);
    let k3 = r.cell(2, 8, 3).unwrap();
    let k10 = r.cell(2, 8, 10).unwrap();
    // 13 steps per epoch with 10 classes, 4 with 3: 4 * 13 / 4 epochs
    assert_eq!(k10.epochs, 4);
    assert_eq!(k3.epochs, 13);
    assert!(run_capacity_sweep(&tiny(json!({"sweep": {"class_counts": [11]}}))).is_err());
}

#[test]
fn stitch_grid_is_complete() {
    let g = run_stitch_experiment(&tiny(json!({}))).unwrap().grid;
    assert_eq!(g.entries.len(), 8);
    for e in 1..=2 {
        for t in 1..=2 {
            for k in 1..=2 {
                let a = g.accuracy(e, t, k).unwrap();
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }
    assert_eq!(g.sweeps.len(), 4);
    assert!(g.split >= 1 && g.split <= 4);
    assert!((g.forgetting - (g.task1_after_task1 - g.task1_after_task2)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn detected_start_is_first_layer_over_threshold(
        mean in prop::collection::vec(0.0f64..1.0, 1..20),
        reference in 0.05f64..1.0,
        theta in 0.5f64..1.0,
    ) {
        let curve = ProbeCurve::from_runs(mean.iter().map(|&m| vec![m]).collect());
        let b = detect_tunnel(&curve, reference, theta).unwrap();
        let cut = theta * reference;
        if b.found {
            prop_assert!(mean[b.layer] >= cut);
            prop_assert!(mean[..b.layer].iter().all(|&m| m < cut));
        } else {
            prop_assert_eq!(b.layer, mean.len() - 1);
            prop_assert!(mean.iter().all(|&m| m < cut));
        }
    }

    #[test]
    fn higher_threshold_never_starts_earlier(
        mean in prop::collection::vec(0.0f64..1.0, 1..20),
        reference in 0.05f64..1.0,
    ) {
        let curve = ProbeCurve::from_runs(mean.iter().map(|&m| vec![m]).collect());
        let lo = detect_tunnel(&curve, reference, 0.95).unwrap();
        let hi = detect_tunnel(&curve, reference, 0.98).unwrap();
        prop_assert!(!hi.found || (lo.found && lo.layer <= hi.layer));
    }
}

#[test]
fn detect_tunnel_rejects_bad_inputs() {
    let curve = ProbeCurve::from_runs(vec![vec![0.5]]);
    assert!(detect_tunnel(&curve, 0.0, 0.95).is_err());
    assert!(detect_tunnel(&curve, 0.5, 1.5).is_err());
    assert!(detect_tunnel(&ProbeCurve::from_runs(vec![]), 0.5, 0.95).is_err());
}
