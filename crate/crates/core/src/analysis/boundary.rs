//! Distance to the decision boundary along a one-shot FGSM direction.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::nn::{sgd_step, Tape, Tensor};

/// Temperature used for the FGSM sign; the sign of a two-class gradient
/// does not depend on it.
pub const DIRECTION_TEMPERATURE: f64 = 1.0;

/// `sign(d loss(x, label) / d x)` as a tensor shaped like `x`.
fn fgsm_direction(model: &Model, x: &Tensor, label: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(true));
    let fwd = model.forward(&mut tape, xv, Mode::Eval)?;
    let loss = tape.ce_loss_t(fwd.logits, &[label], DIRECTION_TEMPERATURE)?;
    tape.backward(loss)?;
    let grad = tape.grad(xv).ok_or_else(|| Error::state("input gradient missing"))?;
    let sign = grad
        .iter()
        .map(|&g| {
            if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(x.shape().to_vec(), sign)
}

fn as_batch(model: &Model, x: &Tensor) -> Result<Tensor> {
    let sample = &model.spec().input_shape;
    if x.shape() == sample.as_slice() {
        let mut shape = vec![1];
        shape.extend_from_slice(sample);
        x.clone().reshape(shape)
    } else if x.shape().len() == sample.len() + 1 && x.shape()[0] == 1 && x.shape()[1..] == sample[..] {
        Ok(x.clone())
    } else {
        Err(Error::invalid(format!("sample shape {:?} does not match model input {sample:?}", x.shape())))
    }
}

/// Smallest grid value `eps_max * k / steps` (`k = 1..=steps`) for which
/// `x + eps * sign(grad_x loss(x, label))` changes the predicted class.
/// The direction is computed once, at `x`.
pub fn boundary_distance(model: &Model, x: &Tensor, label: usize, eps_max: f64, steps: usize) -> Result<Option<f64>> {
    if steps < 2 {
        return Err(Error::invalid("boundary sweep needs at least two steps"));
    }
    if !(eps_max > 0.0 && eps_max.is_finite()) {
        return Err(Error::invalid(format!("eps_max must be positive, got {eps_max}")));
    }
    let x = as_batch(model, x)?;
    let original = model.predict(&x)?[0];
    let dir = fgsm_direction(model, &x, label)?;
    let width = x.len();
    let mut grid = Vec::with_capacity(steps * width);
    let eps: Vec<f64> = (1..=steps).map(|k| eps_max * k as f64 / steps as f64).collect();
    for &e in &eps {
        grid.extend(x.data().iter().zip(dir.data()).map(|(v, d)| v + e * d));
    }
    let mut shape = x.shape().to_vec();
    shape[0] = steps;
    let preds = model.predict(&Tensor::new(shape, grid)?)?;
    Ok(preds.iter().position(|&p| p != original).map(|k| eps[k]))
}

/// Signed distance: `+d` when the model classifies `x` correctly, `-d`
/// otherwise, with `d` measured from the predicted class and clamped to
/// `eps_max` when no grid point flips.
pub fn signed_position(model: &Model, x: &Tensor, label: usize, eps_max: f64, steps: usize) -> Result<f64> {
    let xb = as_batch(model, x)?;
    let predicted = model.predict(&xb)?[0];
    let d = boundary_distance(model, &xb, predicted, eps_max, steps)?.unwrap_or(eps_max);
    Ok(if predicted == label { d } else { -d })
}

/// Settings for [`boundary_shift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub eps_max: f64,
    pub steps: usize,
}

/// For every sample the model misclassifies: take one SGD step on that
/// sample alone at `temperature`, then report `position(after) -
/// position(before)`. Each sample starts from the same `model`.
pub fn boundary_shift(model: &Model, ds: &Dataset, cfg: ShiftConfig) -> Result<Vec<f64>> {
    let predicted = model.predict(ds.features())?;
    let mut shifts = Vec::new();
    for (i, (&p, &label)) in predicted.iter().zip(ds.labels()).enumerate() {
        if p == label {
            continue;
        }
        let x = ds.features().select_rows(&[i])?;
        let before = signed_position(model, &x, label, cfg.eps_max, cfg.steps)?;
        let mut updated = model.clone();
        updated.loss_and_grads(&x, &[label], cfg.temperature)?;
        sgd_step(&mut updated.params, cfg.learning_rate, 0.0, 0)?;
        let after = signed_position(&updated, &x, label, cfg.eps_max, cfg.steps)?;
        shifts.push(after - before);
    }
    Ok(shifts)
}
