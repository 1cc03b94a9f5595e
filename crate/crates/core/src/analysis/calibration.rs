//! Expected calibration error with equal-width, right-closed bins.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::analysis::metrics::predictions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `M + 1` edges; bin `m` is `(edges[m], edges[m + 1]]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean confidence per bin (0 for empty bins).
    pub mean_confidence: Vec<f64>,
    /// Fraction correct per bin (0 for empty bins).
    pub accuracy: Vec<f64>,
    pub ece: f64,
}

impl CalibrationReport {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `sum_m (|B_m| / n) |acc_m - conf_m|` from the per-bin fields, summed
    /// from the highest-confidence bin down.
    pub fn ece_from_bins(&self) -> f64 {
        let n = self.total() as f64;
        self.counts
            .iter()
            .zip(&self.accuracy)
            .zip(&self.mean_confidence)
            .rev()
            .map(|((&c, a), f)| c as f64 / n * (a - f).abs())
            .sum()
    }
}

/// Smallest `m` with `confidence <= (m + 1) / M`; confidences at or below 0
/// land in the first bin.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let edge = |m: usize| m as f64 / bins as f64;
    let mut m = ((confidence * bins as f64).ceil() as usize).clamp(1, bins) - 1;
    while m > 0 && confidence <= edge(m) {
        m -= 1;
    }
    while m + 1 < bins && confidence > edge(m + 1) {
        m += 1;
    }
    m
}

pub fn calibration_from(confidences: &[f64], correct: &[bool], bins: usize) -> Result<CalibrationReport> {
    if bins == 0 {
        return Err(Error::invalid("calibration needs at least one bin"));
    }
    if confidences.len() != correct.len() || confidences.is_empty() {
        return Err(Error::invalid("calibration needs equally many confidences and outcomes, at least one"));
    }
    let mut counts = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
        }
        let m = bin_index(c, bins);
        counts[m] += 1;
        conf_sum[m] += c;
        hits[m] += usize::from(ok);
    }
    let mean_confidence: Vec<f64> = conf_sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let accuracy: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    let mut report = CalibrationReport {
        edges: (0..=bins).map(|m| m as f64 / bins as f64).collect(),
        counts,
        mean_confidence,
        accuracy,
        ece: 0.0,
    };
    report.ece = report.ece_from_bins();
    Ok(report)
}

/// Calibration of `model` on `ds` with confidence `max_j softmax(z / T)_j`.
pub fn calibration(model: &Model, ds: &Dataset, t_eval: f64, bins: usize) -> Result<CalibrationReport> {
    let p = predictions(model, ds, t_eval)?;
    let confidences: Vec<f64> = (0..ds.len()).map(|i| p.row(i)[p.predicted[i]]).collect();
    let correct: Vec<bool> = p.predicted.iter().zip(ds.labels()).map(|(a, b)| a == b).collect();
    calibration_from(&confidences, &correct, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_right_closed() {
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(0.70000001, 10), 7);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
    }

    #[test]
    fn perfect_confident_predictions() {
        let r = calibration_from(&[1.0; 5], &[true; 5], 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.counts[9], 5);
    }
}
