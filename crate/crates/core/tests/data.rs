//! Partitioner statistics and synthetic-data separability.

use flexchill_core::analysis::evaluate;
use flexchill_core::data::{dirichlet_proportions, gen_gaussian_blobs, partition_dirichlet, partition_shards, Dataset};
use flexchill_core::fed::{client_update, FLConfig, LocalContext};
use flexchill_core::model::{build_model, ModelSpec};
use flexchill_core::Tensor;

fn balanced(classes: usize, per_class: usize) -> Dataset {
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    Dataset::new(Tensor::zeros(&[labels.len(), 1]), labels, classes).unwrap()
}

#[test]
fn large_alpha_is_near_uniform() {
    let ds = balanced(10, 1000);
    for seed in 0..10 {
        let p = partition_dirichlet(&ds, 10, 1000.0, seed).unwrap();
        for h in p.class_histograms(&ds) {
            let mean = h.iter().sum::<usize>() as f64 / 10.0;
            for &c in &h {
                assert!((c as f64 / mean - 1.0).abs() <= 0.2, "seed {seed}: {h:?}");
            }
        }
    }
}

#[test]
fn small_alpha_concentrates_clients_on_few_classes() {
    let ds = balanced(10, 500);
    let mut counts = Vec::new();
    for seed in 0..25 {
        let p = partition_dirichlet(&ds, 10, 0.1, seed).unwrap();
        for h in p.class_histograms(&ds) {
            let total: usize = h.iter().sum();
            if total == 0 {
                counts.push(0);
                continue;
            }
            counts.push(h.iter().filter(|&&c| c as f64 >= 0.05 * total as f64).count());
        }
    }
    counts.sort_unstable();
    let median = counts[counts.len() / 2];
    assert!(median <= 3, "median classes per client {median}");
}

/// Largest gap between the cumulative class distributions of `a` and `b`.
fn kolmogorov(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let (mut ca, mut cb, mut worst) = (0.0, 0.0, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        ca += x / sa;
        cb += y / sb;
        worst = worst.max((ca - cb).abs());
    }
    worst
}

#[test]
fn realized_proportions_track_the_drawn_ones() {
    let ds = balanced(10, 10_000);
    let seed = 17;
    let p = partition_dirichlet(&ds, 10, 1.0, seed).unwrap();
    let (_, q) = dirichlet_proportions(10, 10, 1.0, seed).unwrap();
    for (h, target) in p.class_histograms(&ds).iter().zip(&q) {
        let realized: Vec<f64> = h.iter().map(|&c| c as f64).collect();
        if realized.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let d = kolmogorov(&realized, target);
        assert!(d < 0.05, "distance {d}");
    }
}

#[test]
fn shard_clients_hold_shards_per_client_times_shard_size() {
    let ds = balanced(10, 1000);
    let p = partition_shards(&ds, 20, 200, 2, 5).unwrap();
    assert!(p.sizes().iter().all(|&s| s == 400));
    p.validate(ds.len()).unwrap();
    // With 1000 samples per class no 200-wide shard straddles two classes.
    for h in p.class_histograms(&ds) {
        assert!(h.iter().filter(|&&c| c > 0).count() <= 2);
    }
}

#[test]
fn tight_blobs_are_linearly_separable() {
    let ds = gen_gaussian_blobs(3, 30, 2, 1e-3, 8).unwrap();
    let cfg = FLConfig {
        model: ModelSpec::logreg(2, 3),
        local_epochs: 300,
        batch_size: 90,
        learning_rate: 0.5,
        lr_decay: 0.0,
        ..FLConfig::default()
    };
    let model = build_model(&cfg.model, 0).unwrap();
    let trained = client_update(&model, &ds, &cfg, LocalContext { round: 1, client_id: 0 }).unwrap();
    assert_eq!(evaluate(&trained, &ds, 1.0).unwrap().0, 1.0);
}
