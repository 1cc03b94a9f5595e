//! Temperature-scaled softmax and its cross entropy.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive and finite, got {temperature}")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in logits".into()));
    }
    Ok(())
}

/// Writes `softmax(row / T)` into `out` and returns `log sum exp(row / T)`.
fn softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z / temperature - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    max + total.ln()
}

/// Row-wise `softmax(logits / T)` of a `[batch, C]` tensor (a rank-1 tensor
/// is treated as a single row).
pub fn softmax_t(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    check_finite(logits.data())?;
    let classes = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("softmax_t on rank-0 tensor"))?;
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.data().chunks(classes).zip(out.chunks_mut(classes)) {
        softmax_row(row, temperature, o);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Per-row negative log likelihoods and the probabilities, via log-sum-exp.
pub(crate) fn softmax_cross_entropy_rows(
    logits: &[f64],
    labels: &[usize],
    classes: usize,
    temperature: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_temperature(temperature)?;
    check_finite(logits)?;
    let mut probs = vec![0.0; logits.len()];
    let nll = logits
        .chunks(classes)
        .zip(probs.chunks_mut(classes))
        .zip(labels)
        .map(|((row, p), &label)| {
            let lse = softmax_row(row, temperature, p);
            lse - row[label] / temperature
        })
        .collect();
    Ok((nll, probs))
}

/// Closed-form logit gradient of the per-sample loss: `(p - onehot(label)) / T`.
pub fn ce_logit_gradient(logits: &[f64], label: usize, temperature: f64) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", logits.len())));
    }
    let p = softmax_t(&Tensor::new(vec![logits.len()], logits.to_vec())?, temperature)?;
    Ok(p
        .data()
        .iter()
        .enumerate()
        .map(|(j, &pj)| (pj - if j == label { 1.0 } else { 0.0 }) / temperature)
        .collect())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        for t in [0.05, 1.0, 7.0] {
            let p = softmax_t(&row(&[0.0, 0.0, 0.0]), t).unwrap();
            for &v in p.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_class_reference_values() {
        let p = softmax_t(&row(&[1.0, 0.0]), 1.0).unwrap();
        assert!((p.data()[0] - 0.73106).abs() < 1e-5);
        assert!((p.data()[1] - 0.26894).abs() < 1e-5);
        let p = softmax_t(&row(&[1.0, 0.0]), 0.25).unwrap();
        assert!((p.data()[0] - 0.98201).abs() < 1e-5);
        assert!((p.data()[1] - 0.01799).abs() < 1e-5);
    }

    #[test]
    fn extreme_chilling_stays_finite() {
        let p = softmax_t(&row(&[50.0, -50.0, 49.0]), 0.01).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite()));
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature_and_nan() {
        assert!(matches!(softmax_t(&row(&[1.0]), 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(softmax_t(&row(&[1.0]), -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(softmax_t(&row(&[f64::NAN, 1.0]), 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[3.0, 1.0, 2.0]), 0);
        assert_eq!(argmax(&[1.0, 4.0, 4.0]), 1);
    }
}
