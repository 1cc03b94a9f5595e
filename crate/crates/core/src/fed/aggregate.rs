//! Weighted parameter averaging and client selection.

use crate::error::{Error, Result};
use crate::fed::config::FLConfig;
use crate::nn::ParamSet;
use crate::rng::{stream_rng, Stream};

/// `m` distinct client ids, uniform without replacement, ascending.
/// Depends only on `(seed, round)`.
pub fn sample_clients(round: usize, cfg: &FLConfig) -> Vec<usize> {
    let mut rng = stream_rng(cfg.seed, Stream::Select, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, cfg.total_clients, cfg.participants_per_round).into_vec();
    ids.sort_unstable();
    ids
}

/// Elementwise weighted mean of congruent parameter sets; weights are
/// normalized to sum to one.
///
/// Every coordinate is computed as `x_0 + sum_k w_k (x_k - x_0)`, so
/// coordinates on which all inputs agree come back bit-exact. Batch-norm
/// entries are averaged too; under FedBN that result is only the server's
/// evaluation copy and is never sent to clients.
pub fn aggregate(models: &[(&ParamSet, f64)]) -> Result<ParamSet> {
    let (first, _) = *models
        .first()
        .ok_or_else(|| Error::invalid("aggregate needs at least one model"))?;
    for (p, w) in models {
        first.ensure_congruent(p)?;
        if !(*w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("aggregation weight {w} is not a non-negative number")));
        }
    }
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("aggregation weights sum to zero"));
    }
    let mut out = first.clone();
    out.clear_grads();
    for (idx, entry) in out.entries_mut().iter_mut().enumerate() {
        let base = first.get(idx).tensor.data();
        for (j, v) in entry.tensor.data_mut().iter_mut().enumerate() {
            let x0 = base[j];
            let mut acc = 0.0;
            for (p, w) in models {
                acc += (w / total) * (p.get(idx).tensor.data()[j] - x0);
            }
            *v = x0 + acc;
        }
    }
    Ok(out)
}

/// Weights proportional to client sample counts.
pub fn sample_count_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}
