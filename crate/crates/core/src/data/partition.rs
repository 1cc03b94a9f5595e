//! Splitting a dataset across clients without overlap.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream, StreamRng};

/// Per-client ordered index lists into one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub assignments: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, i: usize) -> &[usize] {
        &self.assignments[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn num_assigned(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    /// Checks that every index is below `n` and none repeats.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (c, idx) in self.assignments.iter().enumerate() {
            for &i in idx {
                if i >= n {
                    return Err(Error::invalid(format!("client {c}: index {i} out of range for {n} samples")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("client {c}: index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }

    /// Per-client class histogram.
    pub fn class_histograms(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut h = vec![0; ds.num_classes()];
                for &i in idx {
                    h[ds.labels()[i]] += 1;
                }
                h
            })
            .collect()
    }
}

/// Shuffles all indices and deals `floor(N / num_clients)` to each client.
pub fn partition_iid(n: usize, num_clients: usize, seed: u64) -> Result<ClientPartition> {
    if num_clients == 0 || num_clients > n {
        return Err(Error::invalid(format!("cannot split {n} samples across {num_clients} clients")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Partition, &[2]));
    let per = n / num_clients;
    Ok(ClientPartition {
        assignments: order.chunks_exact(per).take(num_clients).map(<[usize]>::to_vec).collect(),
    })
}

pub fn partition_shards(
    ds: &Dataset,
    num_clients: usize,
    shard_size: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<ClientPartition> {
    if num_clients == 0 || shard_size == 0 || shards_per_client == 0 {
        return Err(Error::invalid("num_clients, shard_size and shards_per_client must be positive"));
    }
    let required = num_clients * shards_per_client * shard_size;
    if required > ds.len() {
        return Err(Error::invalid(format!(
            "shard partition needs {required} samples ({num_clients} clients x {shards_per_client} shards x {shard_size}), dataset has {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.labels()[i], i));
    let mut shards: Vec<&[usize]> = order.chunks_exact(shard_size).collect();
    shards.shuffle(&mut stream_rng(seed, Stream::Partition, &[1]));
    let assignments = shards
        .chunks_exact(shards_per_client)
        .take(num_clients)
        .map(|group| group.concat())
        .collect();
    Ok(ClientPartition { assignments })
}

fn dirichlet_row(gamma: &Gamma<f64>, k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every draw underflowed (tiny alpha): all mass on one class.
        row.iter_mut().for_each(|v| *v = 0.0);
        row[rng.random_range(0..k)] = 1.0;
    }
    row
}

/// Rows are clients, columns classes.
pub type Proportions = Vec<Vec<f64>>;

/// Draws `p^(i) ~ Dir(alpha)` per client (rows), then normalizes each class
/// column across clients so the shares of one class sum to 1.
///
/// Returns `(raw, normalized)`, both `num_clients x num_classes`.
pub fn dirichlet_proportions(
    num_clients: usize,
    num_classes: usize,
    alpha: f64,
    seed: u64,
) -> Result<(Proportions, Proportions)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if num_clients == 0 || num_classes == 0 {
        return Err(Error::invalid("num_clients and num_classes must be positive"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("gamma({alpha}): {e}")))?;
    let mut rng = stream_rng(seed, Stream::Partition, &[0]);
    let raw: Vec<Vec<f64>> = (0..num_clients)
        .map(|_| dirichlet_row(&gamma, num_classes, &mut rng))
        .collect();
    let mut norm = raw.clone();
    for k in 0..num_classes {
        let col: f64 = raw.iter().map(|r| r[k]).sum();
        for row in norm.iter_mut() {
            row[k] = if col > 0.0 { row[k] / col } else { 0.0 };
        }
    }
    Ok((raw, norm))
}

/// Client `i` receives `floor(|D_k| * q_k^(i))` samples of class `k`, taken
/// in order from a shuffled class pool; `q` is the column-normalized
/// proportion matrix from [`dirichlet_proportions`]. Remainders stay
/// unassigned.
pub fn partition_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<ClientPartition> {
    let (_, q) = dirichlet_proportions(num_clients, ds.num_classes(), alpha, seed)?;
    let mut assignments = vec![Vec::new(); num_clients];
    for (k, mut pool) in ds.class_indices().into_iter().enumerate() {
        pool.shuffle(&mut stream_rng(seed, Stream::Partition, &[3, k as u64]));
        let size = pool.len() as f64;
        let mut cursor = 0;
        for (client, row) in q.iter().enumerate() {
            let take = ((size * row[k]).floor() as usize).min(pool.len() - cursor);
            assignments[client].extend_from_slice(&pool[cursor..cursor + take]);
            cursor += take;
        }
    }
    Ok(ClientPartition { assignments })
}
