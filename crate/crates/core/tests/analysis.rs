//! Measurement procedures against independent oracles.

use flexchill_core::analysis::{
    boundary_distance, boundary_shift, calibration, calibration_from, cka_report, evaluate, input_gradient_norms,
    linear_cka, median, output_entropy, pre_post_aggregation_delta, FeatureMatrix, ShiftConfig,
};
use flexchill_core::data::{gen_gaussian_blobs, Dataset};
use flexchill_core::fed::{client_update, FLConfig, LocalContext};
use flexchill_core::model::{build_model, Model, ModelSpec};
use flexchill_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> FeatureMatrix {
    FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

/// `tr(K H L H)` with explicit centering matrix `H = I - 11^T / n`.
fn hsic(k: &[Vec<f64>], l: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect())
        .collect();
    let mul = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| a[i][t] * b[t][j]).sum()).collect()).collect()
    };
    let m = mul(&mul(&mul(k, &h), l), &h);
    (0..n).map(|i| m[i][i]).sum::<f64>() / ((n - 1) * (n - 1)) as f64
}

fn gram(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| (0..x.rows()).map(|j| (0..x.cols()).map(|c| x.get(i, c) * x.get(j, c)).sum()).collect())
        .collect()
}

fn hsic_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> f64 {
    let (k, l) = (gram(x), gram(y));
    hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
}

#[test]
fn cka_agrees_with_brute_force_hsic() {
    let mut r = rng(3);
    for trial in 0..20 {
        let n = r.random_range(3..=8);
        let x = random_matrix(n, r.random_range(1..=4), &mut r);
        let y = random_matrix(n, r.random_range(1..=5), &mut r);
        let (a, b) = (linear_cka(&x, &y).unwrap(), hsic_cka(&x, &y));
        assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
    }
    let x = random_matrix(4, 2, &mut r);
    let y = random_matrix(4, 3, &mut r);
    assert!((linear_cka(&x, &y).unwrap() - hsic_cka(&x, &y)).abs() < 1e-10);
}

#[test]
fn constant_features_are_undefined() {
    let x = FeatureMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
    let c = FeatureMatrix::new(3, 2, vec![4.0; 6]).unwrap();
    assert!(matches!(linear_cka(&x, &c), Err(Error::UndefinedSimilarity(_))));
}

/// `(1/n) sum_m |hits_m - sum_{i in B_m} c_i|` in exact integer arithmetic
/// on the binary64 inputs (all in `[2^-7, 1]`), rounded once at the end.
fn exact_ece(conf: &[f64], correct: &[bool], bins: &[usize], m: usize) -> f64 {
    let unit = 2f64.powi(60);
    let mut per_bin = vec![0i128; m];
    for ((&c, &ok), &b) in conf.iter().zip(correct).zip(bins) {
        let scaled = c * unit;
        assert_eq!(scaled.fract(), 0.0);
        per_bin[b] += i128::from(ok) * (1i128 << 60) - scaled as i128;
    }
    let total: i128 = per_bin.iter().map(|v| v.abs()).sum();
    total as f64 / unit / conf.len() as f64
}

#[test]
fn ece_four_sample_hand_case() {
    let conf = [0.95, 0.95, 0.65, 0.55];
    let correct = [true, false, true, true];
    let r = calibration_from(&conf, &correct, 10).unwrap();
    assert_eq!(r.ece, 0.425);
    // The exact ECE of the stored binary64 inputs is a rounding tie between
    // 0.425 and the double below it.
    let exact = exact_ece(&conf, &correct, &[9, 9, 6, 5], 10);
    assert!((r.ece - exact).abs() <= 2f64.powi(-54), "{} vs {exact}", r.ece);
    assert_eq!(r.counts.iter().sum::<usize>(), 4);
    assert_eq!((r.counts[9], r.counts[6], r.counts[5]), (2, 1, 1));
}

#[test]
fn ece_of_an_oracle_calibrated_predictor_is_small() {
    let mut r = rng(8);
    let n = 100_000;
    let conf: Vec<f64> = (0..n).map(|_| r.random_range(0.1..=1.0)).collect();
    let correct: Vec<bool> = conf.iter().map(|&c| r.random_bool(c)).collect();
    let rep = calibration_from(&conf, &correct, 10).unwrap();
    assert!(rep.ece < 0.02, "ece {}", rep.ece);
    assert!((rep.ece - rep.ece_from_bins()).abs() <= 1e-12);
}

fn zero_logreg(dim: usize, classes: usize) -> Model {
    let mut m = build_model(&ModelSpec::logreg(dim, classes), 0).unwrap();
    m.params.get_mut(0).tensor.data_mut().fill(0.0);
    m
}

fn toy(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = Tensor::new(vec![n, dim], (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

#[test]
fn uniform_logits_give_ln_c_loss_and_entropy_at_any_temperature() {
    let model = zero_logreg(3, 10);
    let ds = toy(20, 3, 10, 1);
    for t in [0.05, 1.0, 4.0] {
        let (_, loss) = evaluate(&model, &ds, t).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((output_entropy(&model, &ds, t).unwrap() - 10f64.ln()).abs() < 1e-9);
    }
}

#[test]
fn perfect_logits_and_temperature_free_accuracy() {
    let mut model = zero_logreg(2, 2);
    model.params.get_mut(0).tensor.data_mut().copy_from_slice(&[-5.0, 0.0, 5.0, 0.0]);
    let x = Tensor::new(vec![4, 2], vec![1.0, 0.0, 2.0, 1.0, -1.0, 0.0, -3.0, 2.0]).unwrap();
    let ds = Dataset::new(x, vec![1, 1, 0, 0], 2).unwrap();
    let accs: Vec<f64> = [0.05, 0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&t| evaluate(&model, &ds, t).unwrap().0).collect();
    assert!(accs.iter().all(|&a| a == 1.0));
}

#[test]
fn logreg_input_gradient_norm_closed_form() {
    let mut model = build_model(&ModelSpec::logreg(4, 3), 2).unwrap();
    let mut r = rng(4);
    for v in model.params.get_mut(1).tensor.data_mut() {
        *v = r.random_range(-0.5..0.5);
    }
    let ds = toy(30, 4, 3, 6);
    for t in [0.25, 1.0, 4.0] {
        let norms = input_gradient_norms(&model, &ds, t).unwrap();
        assert_eq!(norms.correct.len() + norms.incorrect.len(), ds.len());
        let w = model.params.get(0).tensor.data();
        let b = model.params.get(1).tensor.data();
        let (mut ci, mut ii) = (0, 0);
        for i in 0..ds.len() {
            let x = ds.features().row(i);
            let z: Vec<f64> = (0..3).map(|k| (0..4).map(|j| w[4 * k + j] * x[j]).sum::<f64>() + b[k]).collect();
            let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
            let s: f64 = e.iter().sum();
            let label = ds.labels()[i];
            let d: Vec<f64> = (0..3).map(|k| e[k] / s - if k == label { 1.0 } else { 0.0 }).collect();
            let g: Vec<f64> = (0..4).map(|j| (0..3).map(|k| w[4 * k + j] * d[k]).sum::<f64>() / t).collect();
            let want = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let pred = flexchill_core::nn::argmax(&z);
            let got = if pred == label {
                ci += 1;
                norms.correct[ci - 1]
            } else {
                ii += 1;
                norms.incorrect[ii - 1]
            };
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn zero_final_layer_gives_zero_input_gradient() {
    let mut model = build_model(&ModelSpec::mlp(5, vec![8], 4), 1).unwrap();
    let last = model.params.len() - 2;
    model.params.get_mut(last).tensor.data_mut().fill(0.0);
    let norms = input_gradient_norms(&model, &toy(12, 5, 4, 2), 0.5).unwrap();
    assert!(norms.correct.iter().chain(&norms.incorrect).all(|&n| n == 0.0));
}

/// Logistic regression on blobs, trained for a few epochs only.
fn half_trained() -> (Model, Dataset) {
    let ds = gen_gaussian_blobs(4, 50, 6, 1.5, 5).unwrap();
    let cfg = FLConfig {
        model: ModelSpec::mlp(6, vec![16], 4),
        local_epochs: 2,
        batch_size: 20,
        learning_rate: 0.05,
        lr_decay: 0.0,
        ..FLConfig::default()
    };
    let init = build_model(&cfg.model, 3).unwrap();
    (client_update(&init, &ds, &cfg, LocalContext { round: 1, client_id: 0 }).unwrap(), ds)
}

#[test]
fn low_temperature_gradient_norms_peak_higher() {
    let (model, ds) = half_trained();
    let all = |t: f64| {
        let n = input_gradient_norms(&model, &ds, t).unwrap();
        n.correct.into_iter().chain(n.incorrect).collect::<Vec<f64>>()
    };
    let (cold, warm) = (all(0.25), all(4.0));
    // The two temperatures differ by more than an order of magnitude, so
    // bin on a log scale.
    let mode = |v: &[f64]| {
        let logs: Vec<f64> = v.iter().map(|n| n.max(1e-12).log10()).collect();
        flexchill_core::analysis::histogram_mode(&logs, -6.0, 1.0, 35).unwrap()
    };
    assert!(mode(&cold) > mode(&warm), "{} vs {}", mode(&cold), mode(&warm));
}

fn line_model() -> Model {
    let mut m = zero_logreg(1, 2);
    m.params.get_mut(0).tensor.data_mut().copy_from_slice(&[0.0, 1.0]);
    m
}

#[test]
fn one_dimensional_boundary_at_half() {
    let model = line_model();
    let x = Tensor::new(vec![1], vec![0.5]).unwrap();
    assert_eq!(model.predict(&Tensor::new(vec![1, 1], vec![0.5]).unwrap()).unwrap(), vec![1]);
    let d = boundary_distance(&model, &x, 1, 1.0, 100).unwrap().unwrap();
    assert!((d - 0.5).abs() <= 1.0 / 100.0);
    assert_eq!(boundary_distance(&model, &x, 1, 0.4, 100).unwrap(), None);
}

#[test]
fn every_larger_grid_point_also_flips_for_linear_models() {
    let mut r = rng(12);
    for _ in 0..50 {
        let mut model = build_model(&ModelSpec::logreg(3, 2), r.random()).unwrap();
        model.params.get_mut(1).tensor.data_mut()[0] = r.random_range(-0.5..0.5);
        let x = Tensor::new(vec![3], (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let xb = x.clone().reshape(vec![1, 3]).unwrap();
        let pred = model.predict(&xb).unwrap()[0];
        let eps_max = 3.0;
        let steps = 60;
        let Some(d) = boundary_distance(&model, &x, pred, eps_max, steps).unwrap() else {
            continue;
        };
        let g = {
            let w = model.params.get(0).tensor.data();
            let other = 1 - pred;
            // Loss gradient sign for class `pred` is the sign of w_other - w_pred.
            (0..3).map(|j| (w[3 * other + j] - w[3 * pred + j]).signum()).collect::<Vec<f64>>()
        };
        for k in 1..=steps {
            let e = eps_max * k as f64 / steps as f64;
            if e < d {
                continue;
            }
            let moved: Vec<f64> = x.data().iter().zip(&g).map(|(v, s)| v + e * s).collect();
            let p = model.predict(&Tensor::new(vec![1, 3], moved).unwrap()).unwrap()[0];
            assert_ne!(p, pred, "eps {e} >= {d} should flip");
        }
    }
}

#[test]
fn colder_single_steps_move_misclassified_points_further() {
    let ds = gen_gaussian_blobs(3, 100, 2, 1.0, 4).unwrap();
    let model = build_model(&ModelSpec::logreg(2, 3), 9).unwrap();
    let shift = |t: f64| {
        let cfg = ShiftConfig {
            temperature: t,
            learning_rate: 0.05,
            eps_max: 4.0,
            steps: 200,
        };
        median(&boundary_shift(&model, &ds, cfg).unwrap()).unwrap()
    };
    let medians: Vec<f64> = [4.0, 1.0, 0.25, 0.05].iter().map(|&t| shift(t)).collect();
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
    assert!(medians[3] > medians[0], "{medians:?}");
}

#[test]
fn aggregation_delta_trivial_cases() {
    let model = build_model(&ModelSpec::logreg(3, 3), 1).unwrap();
    let sets = vec![toy(10, 3, 3, 1), toy(10, 3, 3, 2), toy(10, 3, 3, 3)];
    let d = pre_post_aggregation_delta(&[(0, &model), (2, &model)], &model, &model, &sets, 1.0).unwrap();
    assert!(d.participants.iter().chain(&d.nonparticipants).all(|(_, v)| *v == 0.0));
    assert_eq!(d.nonparticipants.len(), 1);

    let local = build_model(&ModelSpec::logreg(3, 3), 2).unwrap();
    let d = pre_post_aggregation_delta(&[(1, &local)], &model, &local, &sets, 1.0).unwrap();
    assert_eq!(d.mean_participants(), Some(0.0));
}

#[test]
fn cka_report_layout() {
    let spec = ModelSpec::mlp(5, vec![7, 6], 3);
    let reference = build_model(&spec, 0).unwrap();
    let probe = toy(16, 5, 3, 8);
    let same = cka_report(&[&reference, &reference], &reference, &probe, &[0, 2, 4]).unwrap();
    for m in &same.matrices {
        for row in m {
            for v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
    let others: Vec<Model> = (1..4).map(|s| build_model(&spec, s).unwrap()).collect();
    let refs: Vec<&Model> = others.iter().collect();
    let rep = cka_report(&refs, &reference, &probe, &[1, 3]).unwrap();
    for m in &rep.matrices {
        for i in 0..m.len() {
            assert_eq!(m[i][i], 1.0);
            for j in 0..m.len() {
                assert_eq!(m[i][j], m[j][i]);
                assert!((0.0..=1.0).contains(&m[i][j]));
            }
        }
    }
    assert_eq!(rep.reference_column().len(), 2);
    assert!(cka_report(&refs, &reference, &probe, &[99]).is_err());
}

#[test]
fn calibration_from_a_model() {
    let model = zero_logreg(2, 4);
    let rep = calibration(&model, &toy(40, 2, 4, 3), 1.0, 10).unwrap();
    assert_eq!(rep.counts[2], 40);
    assert!((rep.ece - (0.25 - rep.accuracy[2]).abs()).abs() < 1e-12);
}
