//! Local training: plain, proximal and control-variate corrected SGD.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fed::config::FLConfig;
use crate::model::Model;
use crate::nn::{effective_lr, sgd_step, ParamSet};
use crate::rng::{stream_rng, Stream};

/// Which round and client a local update belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalContext {
    /// 1-based.
    pub round: usize,
    pub client_id: usize,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub model: Model,
    pub steps: u64,
    /// Sum of the decayed learning rates over the local steps.
    pub lr_sum: f64,
}

/// Number of SGD steps one local update takes on `n` samples.
pub fn local_steps(cfg: &FLConfig, n: usize) -> u64 {
    (cfg.local_epochs * n.div_ceil(cfg.batch_size)) as u64
}

/// Runs `local_epochs` passes of shuffled minibatch SGD at the round's
/// temperature, calling `adjust` on the gradients before every step.
///
/// The shuffle order depends on `(seed, round, epoch)` only, so clients
/// holding the same data take the same path.
pub fn local_train<F>(
    global: &Model,
    data: &Dataset,
    cfg: &FLConfig,
    ctx: LocalContext,
    mut adjust: F,
) -> Result<LocalOutcome>
where
    F: FnMut(&mut ParamSet) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::invalid(format!("client {} has no training data", ctx.client_id)));
    }
    let temperature = cfg.temperature_at(ctx.round);
    let n = data.len();
    let steps = local_steps(cfg, n);
    let first_step = ctx.round.saturating_sub(1) as u64 * steps;
    let mut model = global.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut taken = 0;
    let mut lr_sum = 0.0;
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, &[ctx.round as u64, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features().select_rows(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let loss = model.loss_and_grads(&x, &labels, temperature)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "client {} round {}: non-finite loss {loss}",
                    ctx.client_id, ctx.round
                )));
            }
            adjust(&mut model.params)?;
            let step = first_step + taken;
            lr_sum += effective_lr(cfg.learning_rate, cfg.lr_decay, step);
            sgd_step(&mut model.params, cfg.learning_rate, cfg.lr_decay, step)?;
            taken += 1;
        }
    }
    Ok(LocalOutcome {
        model,
        steps: taken,
        lr_sum,
    })
}

/// Plain local update; `global` is left untouched.
pub fn client_update(global: &Model, data: &Dataset, cfg: &FLConfig, ctx: LocalContext) -> Result<Model> {
    Ok(local_train(global, data, cfg, ctx, |_| Ok(()))?.model)
}

/// `(mu / 2) * ||w - w_global||^2` over trainable entries.
pub fn proximal_penalty(w: &ParamSet, w_global: &ParamSet, mu: f64) -> Result<f64> {
    Ok(0.5 * mu * w.squared_distance(w_global)?)
}

/// Adds `mu * (w - w_global)` to every trainable gradient.
fn add_proximal_gradient(params: &mut ParamSet, anchor: &ParamSet, mu: f64) {
    for (e, a) in params.entries_mut().iter_mut().zip(anchor.entries()) {
        if !e.role.is_trainable() {
            continue;
        }
        let diff: Vec<f64> = e.tensor.data().iter().zip(a.tensor.data()).map(|(w, g)| mu * (w - g)).collect();
        if let Some(grad) = e.tensor.grad_mut() {
            grad.iter_mut().zip(&diff).for_each(|(g, d)| *g += d);
        }
    }
}

/// Local update with the proximal term; identical to [`client_update`] when
/// `fedprox_mu == 0`.
pub fn client_update_fedprox(global: &Model, data: &Dataset, cfg: &FLConfig, ctx: LocalContext) -> Result<Model> {
    let mu = cfg.fedprox_mu;
    let anchor = &global.params;
    let out = local_train(global, data, cfg, ctx, |p| {
        if mu > 0.0 {
            add_proximal_gradient(p, anchor, mu);
        }
        Ok(())
    })?;
    Ok(out.model)
}

/// Server and per-client control variates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    pub server_c: ParamSet,
    pub client_c: Vec<ParamSet>,
}

impl ControlState {
    pub fn new(params: &ParamSet, num_clients: usize) -> Self {
        let zero = params.zeros_like();
        ControlState {
            client_c: vec![zero.clone(); num_clients],
            server_c: zero,
        }
    }

    /// `c <- c + (m / K) * mean_i(c_i+ - c_i)` over the `m` updated clients
    /// (that is, the sum of the changes over `K`), then stores each `c_i+`.
    pub fn apply(&mut self, updates: Vec<(usize, ParamSet)>) -> Result<()> {
        if updates.is_empty() {
            return Ok(());
        }
        let k = self.client_c.len() as f64;
        for (id, new_c) in &updates {
            let old = self
                .client_c
                .get(*id)
                .ok_or_else(|| Error::invalid(format!("control update for unknown client {id}")))?;
            old.ensure_congruent(new_c)?;
            for ((s, o), n) in self.server_c.entries_mut().iter_mut().zip(old.entries()).zip(new_c.entries()) {
                for ((sv, ov), nv) in s.tensor.data_mut().iter_mut().zip(o.tensor.data()).zip(n.tensor.data()) {
                    *sv += (nv - ov) / k;
                }
            }
        }
        for (id, new_c) in updates {
            self.client_c[id] = new_c;
        }
        Ok(())
    }
}

/// Local update with the gradient correction `g - c_i + c`. Returns the
/// model and `c_i+ = c_i - c + (w_global - w_local) / (S * mean_lr)`.
pub fn client_update_scaffold(
    global: &Model,
    data: &Dataset,
    cfg: &FLConfig,
    ctx: LocalContext,
    ctl: &ControlState,
) -> Result<(Model, ParamSet)> {
    let c = &ctl.server_c;
    let ci = ctl
        .client_c
        .get(ctx.client_id)
        .ok_or_else(|| Error::invalid(format!("no control variate for client {}", ctx.client_id)))?;
    global.params.ensure_congruent(c)?;
    global.params.ensure_congruent(ci)?;
    let out = local_train(global, data, cfg, ctx, |p| {
        for ((e, ce), cie) in p.entries_mut().iter_mut().zip(c.entries()).zip(ci.entries()) {
            if !e.role.is_trainable() {
                continue;
            }
            if let Some(grad) = e.tensor.grad_mut() {
                for ((g, s), l) in grad.iter_mut().zip(ce.tensor.data()).zip(cie.tensor.data()) {
                    *g = *g - l + s;
                }
            }
        }
        Ok(())
    })?;
    if !(out.lr_sum > 0.0) {
        return Err(Error::invalid("scaffold control update needs a positive effective learning rate"));
    }
    let mut new_c = ci.clone();
    for (((n, ce), wg), wl) in new_c
        .entries_mut()
        .iter_mut()
        .zip(c.entries())
        .zip(global.params.entries())
        .zip(out.model.params.entries())
    {
        if !n.role.is_trainable() {
            continue;
        }
        let (cd, gd, ld) = (ce.tensor.data(), wg.tensor.data(), wl.tensor.data());
        for (j, v) in n.tensor.data_mut().iter_mut().enumerate() {
            *v = *v - cd[j] + (gd[j] - ld[j]) / out.lr_sum;
        }
    }
    Ok((out.model, new_c))
}
