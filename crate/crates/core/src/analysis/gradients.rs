//! Per-sample input-gradient norms and histogram helpers.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, EVAL_CHUNK};
use crate::nn::{argmax, Reduction, Tape};

/// Norms of the per-sample input gradients, split by whether the model
/// classifies the sample correctly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientNorms {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

/// `||d ce_loss_t(x_i) / d x_i||_2` for every sample, in eval mode.
pub fn input_gradient_norms(model: &Model, ds: &Dataset, temperature: f64) -> Result<GradientNorms> {
    if ds.is_empty() {
        return Err(Error::invalid("gradient-norm dataset is empty"));
    }
    let c = model.spec().num_classes;
    let mut out = GradientNorms::default();
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = ds.features().select_rows(chunk)?.with_requires_grad(true);
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let fwd = model.forward(&mut tape, xv, Mode::Eval)?;
        let loss = tape.ce_loss_t_with(fwd.logits, &labels, temperature, Reduction::Sum)?;
        tape.backward(loss)?;
        let grad = tape
            .grad(xv)
            .ok_or_else(|| Error::state("input gradient missing after backward"))?;
        let width = x.row_len();
        let logits = tape.value(fwd.logits).data();
        for (i, &label) in labels.iter().enumerate() {
            let g = &grad[i * width..(i + 1) * width];
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if argmax(&logits[i * c..(i + 1) * c]) == label {
                out.correct.push(norm);
            } else {
                out.incorrect.push(norm);
            }
        }
    }
    Ok(out)
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values
/// outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<usize>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::invalid(format!("histogram needs bins > 0 and hi > lo, got {bins}, [{lo}, {hi}]")));
    }
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts)
}

/// Center of the most populated histogram bin (first one on ties).
pub fn histogram_mode(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("mode of an empty sample"));
    }
    let counts = histogram(values, lo, hi, bins)?;
    let best = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
    let width = (hi - lo) / bins as f64;
    Ok(lo + (best as f64 + 0.5) * width)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
