//! Autodiff checked against closed forms and central finite differences.

use flexchill_core::model::{build_model, Mode, ModelSpec};
use flexchill_core::nn::{finite_difference_at, finite_difference_gradient, relative_error, ParamSet, Reduction, Role, Tape, Tensor, Var};
use flexchill_core::Result;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-4;
const TOL: f64 = 1e-4;
const TEMPERATURES: [f64; 6] = [0.05, 0.25, 0.5, 1.0, 2.0, 4.0];

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Naive softmax without max subtraction; fine for |z / T| well below 700.
fn oracle_gradient(z: &[f64], label: usize, t: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter()
        .enumerate()
        .map(|(j, v)| (v / s - if j == label { 1.0 } else { 0.0 }) / t)
        .collect()
}

#[test]
fn logit_gradient_matches_closed_form_on_random_triples() {
    let mut r = rng(1);
    for trial in 0..2000 {
        let c = r.random_range(2..=12);
        let z: Vec<f64> = (0..c).map(|_| r.random_range(-5.0..5.0)).collect();
        let label = r.random_range(0..c);
        let t = TEMPERATURES[trial % TEMPERATURES.len()];
        let mut tape = Tape::new();
        let zv = tape.leaf(&Tensor::new(vec![1, c], z.clone()).unwrap().with_requires_grad(true));
        let loss = tape.ce_loss_t(zv, &[label], t).unwrap();
        tape.backward(loss).unwrap();
        for (a, b) in tape.grad(zv).unwrap().iter().zip(oracle_gradient(&z, label, t)) {
            assert!((a - b).abs() <= 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}

/// Analytic gradients of `sum(r * op(params))` against finite differences.
fn check_op<F>(name: &str, params: ParamSet, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut r = rng(99);
    let probe_shape = {
        let mut tape = Tape::new();
        let vars = params.attach(&mut tape);
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let weights = random_tensor(&probe_shape, &mut r);
    let objective = |p: &ParamSet, tape: &mut Tape| -> Result<(Vec<Var>, Var)> {
        let vars = p.attach(tape);
        let out = build(tape, &vars)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w)?;
        Ok((vars, tape.sum(prod)?))
    };
    let mut tape = Tape::new();
    let (vars, loss) = objective(&params, &mut tape).unwrap();
    tape.backward(loss).unwrap();
    let numeric = finite_difference_gradient(
        |p| {
            let mut t = Tape::new();
            let (_, l) = objective(p, &mut t)?;
            t.value(l).item()
        },
        &params,
        STEP,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numeric[i].len()]);
        for (a, n) in analytic.iter().zip(&numeric[i]) {
            worst = worst.max(relative_error(*a, *n, FLOOR));
        }
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

fn params(entries: &[(&str, &[usize])], seed: u64) -> ParamSet {
    let mut r = rng(seed);
    let mut p = ParamSet::new();
    for (name, shape) in entries {
        p.push(*name, random_tensor(shape, &mut r), Role::Dense).unwrap();
    }
    p
}

#[test]
fn dense_and_relu() {
    check_op("linear", params(&[("x", &[3, 4]), ("w", &[5, 4]), ("b", &[5])], 1), |t, v| {
        t.linear(v[0], v[1], Some(v[2]))
    });
    check_op("relu", params(&[("x", &[4, 6])], 2), |t, v| t.relu(v[0]));
}

#[test]
fn convolutions() {
    check_op("conv2d", params(&[("x", &[2, 3, 6, 5]), ("w", &[4, 3, 3, 2]), ("b", &[4])], 3), |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, 0)
    });
    check_op("conv2d padded", params(&[("x", &[1, 2, 5, 5]), ("w", &[3, 2, 3, 3]), ("b", &[3])], 4), |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 2, 1)
    });
    check_op("conv1d", params(&[("x", &[2, 3, 9]), ("w", &[4, 3, 5]), ("b", &[4])], 5), |t, v| {
        t.conv1d(v[0], v[1], Some(v[2]), 1, 2)
    });
}

#[test]
fn pooling_and_shape_ops() {
    check_op("maxpool2d", params(&[("x", &[2, 3, 6, 6])], 6), |t, v| t.maxpool2d(v[0], 2, 2));
    check_op("maxpool1d", params(&[("x", &[2, 3, 9])], 7), |t, v| t.maxpool1d(v[0], 2, 2));
    check_op("adaptive_avg_pool1d", params(&[("x", &[2, 3, 7])], 8), |t, v| t.adaptive_avg_pool1d(v[0], 3));
    check_op("flatten", params(&[("x", &[2, 3, 4])], 9), |t, v| t.flatten(v[0]));
}

#[test]
fn batch_norm_both_modes() {
    check_op("batchnorm train", params(&[("x", &[4, 3, 5]), ("g", &[3]), ("b", &[3])], 10), |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
    });
    check_op("batchnorm train 2d", params(&[("x", &[5, 3]), ("g", &[3]), ("b", &[3])], 11), |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
    });
    let (mean, var) = ([0.1, -0.2, 0.3], [0.5, 1.5, 0.9]);
    check_op("batchnorm eval", params(&[("x", &[4, 3, 5]), ("g", &[3]), ("b", &[3])], 12), move |t, v| {
        Ok(t.batch_norm(v[0], v[1], v[2], Some((&mean, &var)), 1e-5)?.0)
    });
}

#[test]
fn cross_entropy_at_every_temperature() {
    for (k, &temp) in TEMPERATURES.iter().enumerate() {
        check_op("ce_loss_t", params(&[("z", &[3, 4])], 20 + k as u64), move |t, v| {
            t.ce_loss_t(v[0], &[0, 3, 1], temp)
        });
        check_op("ce_loss_t sum", params(&[("z", &[2, 5])], 30 + k as u64), move |t, v| {
            t.ce_loss_t_with(v[0], &[4, 2], temp, Reduction::Sum)
        });
    }
}

#[test]
fn elementwise_ops() {
    check_op("add", params(&[("a", &[2, 3]), ("b", &[2, 3])], 40), |t, v| t.add(v[0], v[1]));
    check_op("mul", params(&[("a", &[2, 3]), ("b", &[2, 3])], 41), |t, v| t.mul(v[0], v[1]));
    check_op("scale", params(&[("a", &[4])], 42), |t, v| t.scale(v[0], -2.5));
}

/// Model-level check on a sample of coordinates from every trainable entry.
fn check_model(spec: ModelSpec, batch: usize, per_entry: usize, temperature: f64) {
    let mut r = rng(7);
    let mut model = build_model(&spec, 3).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(&spec.input_shape);
    let x = random_tensor(&shape, &mut r);
    let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..spec.num_classes)).collect();
    let reference = model.clone();
    model.loss_and_grads(&x, &labels, temperature).unwrap();
    let mut coords = Vec::new();
    for (i, e) in reference.params.entries().iter().enumerate() {
        if !e.role.is_trainable() {
            continue;
        }
        for _ in 0..per_entry.min(e.tensor.len()) {
            coords.push((i, r.random_range(0..e.tensor.len())));
        }
    }
    let numeric = finite_difference_at(
        |p| {
            let mut m = reference.clone();
            m.set_params(p.clone())?;
            m.loss(&x, &labels, temperature, Mode::Train)
        },
        &reference.params,
        &coords,
        STEP,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (&(i, j), n) in coords.iter().zip(&numeric) {
        let a = model.params.get(i).tensor.grad().expect("gradient present")[j];
        worst = worst.max(relative_error(a, *n, FLOOR));
    }
    assert!(worst < TOL, "{:?}: max relative error {worst:e}", spec.kind);
}

#[test]
fn every_model_kind() {
    check_model(ModelSpec::logreg(2, 3), 5, 50, 0.5);
    check_model(ModelSpec::mlp(20, vec![64], 10), 4, 30, 0.25);
    check_model(ModelSpec::mlp_femnist(), 3, 15, 1.0);
    check_model(ModelSpec::cnn2_cifar(), 2, 15, 0.05);
    check_model(ModelSpec::cnn1d_har(64), 3, 15, 2.0);
}

#[test]
fn gradient_norm_shrinks_as_temperature_grows_for_misclassified_logits() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 1000 {
        let c = r.random_range(2..=10);
        let z: Vec<f64> = (0..c).map(|_| r.random_range(-4.0..4.0)).collect();
        let label = r.random_range(0..c);
        if flexchill_core::nn::argmax(&z) == label {
            continue;
        }
        let norms: Vec<f64> = TEMPERATURES
            .iter()
            .map(|&t| oracle_gradient(&z, label, t).iter().map(|g| g * g).sum::<f64>().sqrt())
            .collect();
        for w in norms.windows(2) {
            assert!(w[0] > w[1], "norms {norms:?} for z={z:?} label {label}");
        }
        checked += 1;
    }
}
