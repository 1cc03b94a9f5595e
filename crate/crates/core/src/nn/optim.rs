use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

/// Inverse-time decayed learning rate `lr / (1 + decay * step)`.
pub fn effective_lr(lr: f64, lr_decay: f64, step_count: u64) -> f64 {
    lr / (1.0 + lr_decay * step_count as f64)
}

/// `w <- w - lr_eff * grad` for every trainable entry, then clears gradients.
///
/// Every trainable tensor must carry a gradient.
pub fn sgd_step(params: &mut ParamSet, lr: f64, lr_decay: f64, step_count: u64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) || !(lr_decay >= 0.0) {
        return Err(Error::invalid(format!("bad learning rate {lr} / decay {lr_decay}")));
    }
    if let Some(e) = params
        .entries()
        .iter()
        .find(|e| e.tensor.requires_grad() && e.tensor.grad().is_none())
    {
        return Err(Error::state(format!("parameter {:?} has no gradient", e.name)));
    }
    let rate = effective_lr(lr, lr_decay, step_count);
    for e in params.entries_mut() {
        if !e.tensor.requires_grad() {
            continue;
        }
        let grad = e.tensor.take_grad().expect("checked above");
        for (w, g) in e.tensor.data_mut().iter_mut().zip(&grad) {
            *w -= rate * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Role;
    use crate::nn::tensor::Tensor;

    fn one(w: f64, g: Option<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(w), Role::Dense).unwrap();
        if let Some(g) = g {
            p.get_mut(0).tensor.set_grad(vec![g]).unwrap();
        }
        p
    }

    #[test]
    fn plain_step() {
        let mut p = one(1.0, Some(2.0));
        sgd_step(&mut p, 0.1, 0.0, 0).unwrap();
        assert!((p.get(0).tensor.data()[0] - 0.8).abs() < 1e-15);
        assert!(p.get(0).tensor.grad().is_none());
    }

    #[test]
    fn decayed_rate() {
        let r = effective_lr(0.001, 1e-5, 1000);
        assert!((r - 0.001 / 1.01).abs() < 1e-18);
        assert!((r - 9.901e-4).abs() < 1e-7);
    }

    #[test]
    fn two_steps_on_linear_objective_equal_one_summed_step() {
        // f(w) = 3w has constant gradient, so two steps == one step with 2x gradient.
        let mut a = one(1.0, Some(3.0));
        sgd_step(&mut a, 0.1, 0.0, 0).unwrap();
        a.get_mut(0).tensor.set_grad(vec![3.0]).unwrap();
        sgd_step(&mut a, 0.1, 0.0, 1).unwrap();
        let mut b = one(1.0, Some(6.0));
        sgd_step(&mut b, 0.1, 0.0, 0).unwrap();
        assert!((a.get(0).tensor.data()[0] - b.get(0).tensor.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut p = one(1.0, None);
        assert!(matches!(sgd_step(&mut p, 0.1, 0.0, 0), Err(Error::State(_))));
    }
}
