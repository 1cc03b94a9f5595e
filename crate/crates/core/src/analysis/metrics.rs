//! Accuracy, loss, entropy and convergence speed.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::argmax;
use crate::nn::loss::softmax_cross_entropy_rows;

/// Eval-mode predictions of `model` on `ds` at temperature `t_eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub num_classes: usize,
    /// `[N * C]` row-major probabilities `softmax(z / T)`.
    pub probs: Vec<f64>,
    /// Per-sample `-log p[label]`.
    pub nll: Vec<f64>,
    /// Argmax of the logits.
    pub predicted: Vec<usize>,
}

impl Predictions {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

pub fn predictions(model: &Model, ds: &Dataset, t_eval: f64) -> Result<Predictions> {
    if ds.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    let logits = model.logits(ds.features())?;
    let c = model.spec().num_classes;
    if let Some(&bad) = ds.labels().iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for a {c}-class model")));
    }
    let (nll, probs) = softmax_cross_entropy_rows(logits.data(), ds.labels(), c, t_eval)?;
    let predicted = logits.data().chunks(c).map(argmax).collect();
    Ok(Predictions {
        num_classes: c,
        probs,
        nll,
        predicted,
    })
}

/// `(accuracy, mean temperature-scaled cross entropy)`; accuracy does not
/// depend on `t_eval`.
pub fn evaluate(model: &Model, ds: &Dataset, t_eval: f64) -> Result<(f64, f64)> {
    let p = predictions(model, ds, t_eval)?;
    let n = ds.len() as f64;
    let correct = p.predicted.iter().zip(ds.labels()).filter(|(a, b)| a == b).count();
    Ok((correct as f64 / n, p.nll.iter().sum::<f64>() / n))
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Mean entropy of `softmax(z / t_eval)` over `ds`.
pub fn output_entropy(model: &Model, ds: &Dataset, t_eval: f64) -> Result<f64> {
    let p = predictions(model, ds, t_eval)?;
    let total: f64 = p.probs.chunks(p.num_classes).map(entropy).sum();
    Ok(total / ds.len() as f64)
}

/// First (1-based) round whose accuracy reaches `target`.
pub fn rounds_to_target<I>(accuracies: I, target: f64) -> Option<usize>
where
    I: IntoIterator<Item = f64>,
{
    accuracies.into_iter().position(|a| a >= target).map(|i| i + 1)
}

/// `rounds(baseline) / rounds(candidate)`; absent if either never reached.
pub fn speedup(baseline_rounds: Option<usize>, candidate_rounds: Option<usize>) -> Option<f64> {
    match (baseline_rounds, candidate_rounds) {
        (Some(b), Some(c)) if c > 0 => Some(b as f64 / c as f64),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_target_first_touch() {
        assert_eq!(rounds_to_target([0.1, 0.3, 0.5], 0.3), Some(2));
        assert_eq!(rounds_to_target([0.1, 0.3, 0.5], 0.6), None);
        assert_eq!(speedup(Some(132), Some(22)), Some(6.0));
        assert_eq!(speedup(None, Some(22)), None);
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.1; 10]) - 10f64.ln()).abs() < 1e-12);
    }
}
