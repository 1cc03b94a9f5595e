//! The server loop: select, dispatch, train locally, aggregate, evaluate.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::metrics::{evaluate, output_entropy};
use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::fed::aggregate::{aggregate, sample_clients};
use crate::fed::client::{client_update, client_update_fedprox, client_update_scaffold, ControlState, LocalContext};
use crate::fed::config::{Algorithm, FLConfig};
use crate::model::{build_model, Model};
use crate::nn::Tensor;
use crate::rng::{stream_rng, Stream};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FLEXCHILL_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_test_accuracy: f64,
    pub global_test_loss: f64,
    /// Mean over participants of `acc(new global) - acc(own local model)` on
    /// their held-out split; NaN when not tracked or no client qualifies.
    pub pre_post_acc_delta_participants: f64,
    /// Mean over non-participants of `acc(new global) - acc(old global)`.
    pub pre_post_acc_delta_nonparticipants: f64,
    /// Mean over participants of their local model's entropy on their own
    /// training split.
    pub entropy_pre_agg: f64,
    /// Mean over participants of the aggregated model's entropy on the same
    /// splits.
    pub entropy_post_agg: f64,
    pub wall_time_s: f64,
    pub temperature: f64,
    pub participants: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for client updates; `None` uses [`THREADS_ENV`] or,
    /// failing that, the machine's parallelism.
    pub threads: Option<usize>,
    pub track_deltas: bool,
    pub track_entropy: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            threads: None,
            track_deltas: true,
            track_entropy: true,
        }
    }
}

impl RunOptions {
    pub fn resolved_threads(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// Handed to the per-round callback after aggregation.
pub struct RoundSnapshot<'a> {
    pub record: &'a RoundRecord,
    /// The aggregated model (for FedBN, with averaged batch-norm entries).
    pub global: &'a Model,
    /// `(client id, locally trained model)` for every participant that trained.
    pub locals: &'a [(usize, Model)],
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub model: Model,
}

struct ClientData {
    train: Option<Dataset>,
    eval: Option<Dataset>,
}

/// Splits each client's indices into training and held-out parts.
fn client_datasets(cfg: &FLConfig, ds: &Dataset, partition: &ClientPartition) -> Result<Vec<ClientData>> {
    partition
        .assignments
        .iter()
        .enumerate()
        .map(|(id, idx)| {
            let mut idx = idx.clone();
            let n_eval = (idx.len() as f64 * cfg.client_holdout).floor() as usize;
            if n_eval > 0 {
                idx.shuffle(&mut stream_rng(cfg.seed, Stream::Holdout, &[id as u64]));
            }
            let (eval, train) = idx.split_at(n_eval);
            let subset = |s: &[usize]| if s.is_empty() { Ok(None) } else { ds.subset(s).map(Some) };
            Ok(ClientData {
                train: subset(train)?,
                eval: subset(eval)?,
            })
        })
        .collect()
}

/// Batch-norm entries of a model, by entry index.
fn bn_state(model: &Model) -> Vec<(usize, Tensor)> {
    model
        .params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.role.is_batchnorm())
        .map(|(i, e)| (i, e.tensor.clone()))
        .collect()
}

fn with_bn(global: &Model, bn: &[(usize, Tensor)]) -> Model {
    let mut m = global.clone();
    for (i, t) in bn {
        m.params.get_mut(*i).tensor = t.clone();
    }
    m
}

struct Trained {
    id: usize,
    model: Model,
    control: Option<crate::nn::ParamSet>,
    weight: f64,
}

fn mean_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn run_federated(cfg: &FLConfig, ds: &Dataset, partition: &ClientPartition, test: &Dataset) -> Result<RunOutput> {
    run_federated_with(cfg, ds, partition, test, &RunOptions::default(), |_| Ok(()))
}

/// Runs `cfg.rounds` rounds and calls `on_round` after each. Results do not
/// depend on the thread count: client results are reduced in id order.
pub fn run_federated_with<F>(
    cfg: &FLConfig,
    ds: &Dataset,
    partition: &ClientPartition,
    test: &Dataset,
    opts: &RunOptions,
    mut on_round: F,
) -> Result<RunOutput>
where
    F: FnMut(&RoundSnapshot<'_>) -> Result<()>,
{
    cfg.validate()?;
    if partition.num_clients() != cfg.total_clients {
        return Err(Error::invalid(format!(
            "partition has {} clients, config expects {}",
            partition.num_clients(),
            cfg.total_clients
        )));
    }
    partition.validate(ds.len())?;
    if test.is_empty() {
        return Err(Error::invalid("test dataset is empty"));
    }
    let clients = client_datasets(cfg, ds, partition)?;
    let mut global = build_model(&cfg.model, cfg.seed)?;
    let fedbn = cfg.algorithm == Algorithm::FedBn && global.has_batchnorm();
    let initial_bn = bn_state(&global);
    let mut bn_table: Vec<Option<Vec<(usize, Tensor)>>> = vec![None; cfg.total_clients];
    let mut controls = (cfg.algorithm == Algorithm::Scaffold).then(|| ControlState::new(&global.params, cfg.total_clients));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.resolved_threads())
        .build()
        .map_err(|e| Error::state(format!("thread pool: {e}")))?;

    // The model client `id` starts from, given the server's current model.
    let view = |server: &Model, table: &[Option<Vec<(usize, Tensor)>>], id: usize| -> Model {
        if fedbn {
            with_bn(server, table[id].as_deref().unwrap_or(&initial_bn))
        } else {
            server.clone()
        }
    };

    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let t_eval = cfg.eval_temperature_at(round);
        let selected = sample_clients(round, cfg);
        let ctl = controls.as_ref();

        let results: Vec<Result<Option<Trained>>> = pool.install(|| {
            selected
                .par_iter()
                .map(|&id| {
                    let Some(data) = clients[id].train.as_ref() else {
                        return Ok(None);
                    };
                    let start = view(&global, &bn_table, id);
                    let ctx = LocalContext { round, client_id: id };
                    let (model, control) = match cfg.algorithm {
                        Algorithm::FedAvg | Algorithm::FedBn => (client_update(&start, data, cfg, ctx)?, None),
                        Algorithm::FedProx => (client_update_fedprox(&start, data, cfg, ctx)?, None),
                        Algorithm::Scaffold => {
                            let (m, c) = client_update_scaffold(&start, data, cfg, ctx, ctl.expect("scaffold state"))?;
                            (m, Some(c))
                        }
                    };
                    Ok(Some(Trained {
                        id,
                        model,
                        control,
                        weight: data.len() as f64,
                    }))
                })
                .collect()
        });
        let mut trained = Vec::with_capacity(results.len());
        for (r, &id) in results.into_iter().zip(&selected) {
            match r? {
                Some(t) => trained.push(t),
                None => log::warn!("round {round}: client {id} has no training data, skipped"),
            }
        }

        let previous = global.clone();
        let previous_table = bn_table.clone();
        if trained.is_empty() {
            log::warn!("round {round}: no selected client had data; global model unchanged");
        } else {
            let inputs: Vec<_> = trained.iter().map(|t| (&t.model.params, t.weight)).collect();
            global.set_params(aggregate(&inputs)?)?;
        }
        if let Some(ctl) = controls.as_mut() {
            ctl.apply(trained.iter_mut().filter_map(|t| t.control.take().map(|c| (t.id, c))).collect())?;
        }
        if fedbn {
            for t in &trained {
                bn_table[t.id] = Some(bn_state(&t.model));
            }
        }

        let (entropy_pre, entropy_post) = if opts.track_entropy && !trained.is_empty() {
            let pairs: Vec<(f64, f64)> = pool.install(|| {
                trained
                    .par_iter()
                    .map(|t| -> Result<(f64, f64)> {
                        let data = clients[t.id].train.as_ref().expect("trained clients have data");
                        let after = view(&global, &bn_table, t.id);
                        Ok((output_entropy(&t.model, data, t_eval)?, output_entropy(&after, data, t_eval)?))
                    })
                    .collect::<Result<_>>()
            })?;
            let (pre, post): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            (mean_or_nan(&pre), mean_or_nan(&post))
        } else {
            (f64::NAN, f64::NAN)
        };

        let (delta_part, delta_nonpart) = if opts.track_deltas {
            let per_client: Vec<Option<(bool, f64)>> = pool.install(|| {
                (0..cfg.total_clients)
                    .into_par_iter()
                    .map(|id| -> Result<Option<(bool, f64)>> {
                        let Some(eval) = clients[id].eval.as_ref() else {
                            return Ok(None);
                        };
                        let after = evaluate(&view(&global, &bn_table, id), eval, t_eval)?.0;
                        match trained.iter().find(|t| t.id == id) {
                            Some(t) => Ok(Some((true, after - evaluate(&t.model, eval, t_eval)?.0))),
                            None => {
                                let before = evaluate(&view(&previous, &previous_table, id), eval, t_eval)?.0;
                                Ok(Some((false, after - before)))
                            }
                        }
                    })
                    .collect::<Result<_>>()
            })?;
            let split = |part: bool| -> Vec<f64> {
                per_client.iter().flatten().filter(|(p, _)| *p == part).map(|(_, d)| *d).collect()
            };
            (mean_or_nan(&split(true)), mean_or_nan(&split(false)))
        } else {
            (f64::NAN, f64::NAN)
        };

        let (acc, loss) = evaluate(&global, test, t_eval)?;
        let record = RoundRecord {
            round,
            global_test_accuracy: acc,
            global_test_loss: loss,
            pre_post_acc_delta_participants: delta_part,
            pre_post_acc_delta_nonparticipants: delta_nonpart,
            entropy_pre_agg: entropy_pre,
            entropy_post_agg: entropy_post,
            wall_time_s: started.elapsed().as_secs_f64(),
            temperature: cfg.temperature_at(round),
            participants: trained.iter().map(|t| t.id).collect(),
        };
        log::debug!("round {round}: acc {acc:.4} loss {loss:.4}");
        let locals: Vec<(usize, Model)> = trained.into_iter().map(|t| (t.id, t.model)).collect();
        on_round(&RoundSnapshot {
            record: &record,
            global: &global,
            locals: &locals,
        })?;
        records.push(record);
    }
    Ok(RunOutput { records, model: global })
}
