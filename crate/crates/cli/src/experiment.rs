//! Loads data, runs the federated loop and writes the result files.
//!
//! Files in the output directory:
//!
//! - `rounds.csv`: one row per round, flushed as it is written.
//! - `summary.json`: final metrics plus the resolved configuration.
//! - `config.cfg`: the experiment file as run.
//! - `grad_norms.csv`, `cka.csv`, `calibration.csv`, `boundaries.csv`,
//!   `boundary_shift.csv`, `model.ckpt`: when enabled.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flexchill_core::analysis::{
    boundary_shift, calibration, cka_report, histogram, input_gradient_norms, median, rounds_to_target, ShiftConfig,
};
use flexchill_core::data::{load_csv, load_idx, partition_dirichlet, partition_iid, partition_shards, GaussianBlobs};
use flexchill_core::fed::{run_federated_with, RunOptions};
use flexchill_core::model::{checkpoint, Layer};
use flexchill_core::{ClientPartition, Dataset, FLConfig, Model, PartitionSpec, RoundRecord};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentFile, MetricsConfig};
use crate::error::{CliError, Result};
use crate::format::sig6;

pub const CSV_HEADER: &str = "round,acc,loss,delta_part,delta_nonpart,entropy_pre,entropy_post,wall_s";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.cfg";

pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(data: &DataSource, seed: u64) -> Result<Datasets> {
    Ok(match data {
        DataSource::Synthetic {
            num_classes,
            dim,
            spread,
            train_per_class,
            test_per_class,
        } => {
            let blobs = GaussianBlobs::new(*num_classes, *dim, *spread, seed)?;
            Datasets {
                train: blobs.sample(*train_per_class, 0)?,
                test: blobs.sample(*test_per_class, 1)?,
            }
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Datasets {
            train: load_idx(train_images, train_labels)?,
            test: load_idx(test_images, test_labels)?,
        },
        DataSource::Csv { train, test, num_classes } => Datasets {
            train: load_csv(train, *num_classes)?,
            test: load_csv(test, *num_classes)?,
        },
    })
}

/// Splits `train` as the config says. A split the data cannot support is a
/// configuration error.
pub fn make_partition(cfg: &FLConfig, train: &Dataset) -> Result<ClientPartition> {
    let k = cfg.total_clients;
    match cfg.partition {
        PartitionSpec::Iid => partition_iid(train.len(), k, cfg.seed),
        PartitionSpec::Shards {
            shard_size,
            shards_per_client,
        } => partition_shards(train, k, shard_size, shards_per_client, cfg.seed),
        PartitionSpec::Dirichlet { alpha } => partition_dirichlet(train, k, alpha, cfg.seed),
    }
    .map_err(|e| CliError::Config(format!("partition: {e}")))
}

pub fn csv_row(r: &RoundRecord, wall_clock: bool) -> String {
    let wall = if wall_clock { r.wall_time_s } else { 0.0 };
    let cells = [
        r.global_test_accuracy,
        r.global_test_loss,
        r.pre_post_acc_delta_participants,
        r.pre_post_acc_delta_nonparticipants,
        r.entropy_pre_agg,
        r.entropy_post_agg,
        wall,
    ];
    let mut row = r.round.to_string();
    for c in cells {
        row.push(',');
        row.push_str(&sig6(c));
    }
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    pub ece: Option<f64>,
    pub median_grad_norm_correct: Option<f64>,
    pub median_grad_norm_incorrect: Option<f64>,
    pub median_boundary_shift: Option<f64>,
    /// The resolved run configuration; deserializes to the `FLConfig` that ran.
    pub config: FLConfig,
    pub data: DataSource,
    pub metrics: MetricsConfig,
}

pub struct Outcome {
    pub summary: Summary,
    pub records: Vec<RoundRecord>,
    pub model: Model,
    pub dir: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{row}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs the experiment and writes its files to `exp.output.dir`.
pub fn run_experiment(exp: &ExperimentFile) -> Result<Outcome> {
    let data = load_data(&exp.data, exp.config.seed)?;
    let cfg = exp.resolve(&data.train)?;
    let partition = make_partition(&cfg, &data.train)?;
    let dir = exp.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    std::fs::write(dir.join(CONFIG_FILE), exp.render()).map_err(|e| CliError::io(dir.join(CONFIG_FILE), e))?;

    let rounds_path = dir.join(ROUNDS_FILE);
    let mut csv = create(&rounds_path)?;
    writeln!(csv, "{CSV_HEADER}")
        .and_then(|_| csv.flush())
        .map_err(|e| CliError::io(&rounds_path, e))?;

    let m = &exp.metrics;
    let opts = RunOptions {
        threads: exp.threads,
        track_deltas: m.track_deltas,
        track_entropy: m.track_entropy,
    };
    let keep_locals = m.cka || m.boundaries;
    let mut last_locals: Vec<(usize, Model)> = Vec::new();
    let started = Instant::now();
    let out = run_federated_with(&cfg, &data.train, &partition, &data.test, &opts, |snap| {
        writeln!(csv, "{}", csv_row(snap.record, exp.output.wall_clock))?;
        csv.flush()?;
        if keep_locals && snap.record.round == cfg.rounds {
            last_locals = snap.locals.to_vec();
        }
        Ok(())
    })?;
    log::info!("{} rounds in {:.1}s", cfg.rounds, started.elapsed().as_secs_f64());

    let last_round = cfg.rounds.max(1);
    let t_train = cfg.temperature_at(last_round);
    let t_eval = cfg.eval_temperature_at(last_round);
    let accs: Vec<f64> = out.records.iter().map(|r| r.global_test_accuracy).collect();
    let mut summary = Summary {
        seed: cfg.seed,
        rounds: cfg.rounds,
        final_accuracy: out.records.last().map(|r| r.global_test_accuracy),
        final_loss: out.records.last().and_then(|r| finite(r.global_test_loss)),
        best_accuracy: accs.iter().copied().reduce(f64::max),
        target_accuracy: cfg.target_accuracy,
        rounds_to_target: cfg.target_accuracy.and_then(|t| rounds_to_target(accs.iter().copied(), t)),
        ece: None,
        median_grad_norm_correct: None,
        median_grad_norm_incorrect: None,
        median_boundary_shift: None,
        config: cfg.clone(),
        data: exp.data.clone(),
        metrics: m.clone(),
    };

    if m.gradient_norms {
        let norms = input_gradient_norms(&out.model, &data.test, t_train)?;
        let log10 = |v: &[f64]| v.iter().map(|x| x.log10()).collect::<Vec<_>>();
        let (lo, hi, bins) = (m.grad_norm_log10_min, m.grad_norm_log10_max, m.grad_norm_bins);
        let correct = histogram(&log10(&norms.correct), lo, hi, bins)?;
        let incorrect = histogram(&log10(&norms.incorrect), lo, hi, bins)?;
        let width = (hi - lo) / bins as f64;
        write_lines(
            &dir.join("grad_norms.csv"),
            "log10_lo,log10_hi,correct,incorrect",
            (0..bins).map(|b| {
                let edge = lo + b as f64 * width;
                format!("{},{},{},{}", sig6(edge), sig6(edge + width), correct[b], incorrect[b])
            }),
        )?;
        summary.median_grad_norm_correct = median(&norms.correct);
        summary.median_grad_norm_incorrect = median(&norms.incorrect);
    }

    if m.calibration {
        let report = calibration(&out.model, &data.test, t_eval, m.calibration_bins)?;
        write_lines(
            &dir.join("calibration.csv"),
            "bin_lo,bin_hi,count,mean_confidence,accuracy",
            (0..report.counts.len()).map(|b| {
                format!(
                    "{},{},{},{},{}",
                    sig6(report.edges[b]),
                    sig6(report.edges[b + 1]),
                    report.counts[b],
                    sig6(report.mean_confidence[b]),
                    sig6(report.accuracy[b])
                )
            }),
        )?;
        summary.ece = Some(report.ece);
    }

    let names: Vec<String> = std::iter::once("global".to_string())
        .chain(last_locals.iter().map(|(id, _)| format!("client_{id}")))
        .collect();

    if m.cka {
        let layers = m.cka_layers.clone().unwrap_or_else(|| weight_layers(&out.model));
        let n = m.cka_probe_size.min(data.test.len());
        let probe = data.test.subset(&(0..n).collect::<Vec<_>>())?;
        let locals: Vec<&Model> = last_locals.iter().map(|(_, m)| m).collect();
        let report = cka_report(&locals, &out.model, &probe, &layers)?;
        let mut rows = Vec::new();
        for (layer, mat) in report.layers.iter().zip(&report.matrices) {
            for (i, row) in mat.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    rows.push(format!("{layer},{},{},{}", names[i], names[j], sig6(*v)));
                }
            }
        }
        write_lines(&dir.join("cka.csv"), "layer,model_a,model_b,cka", rows)?;
    }

    if m.boundaries {
        let models = std::iter::once(&out.model).chain(last_locals.iter().map(|(_, m)| m));
        let mut rows = Vec::new();
        for (name, model) in names.iter().zip(models) {
            rows.extend(logreg_rows(name, model)?);
        }
        let dim = cfg.model.input_shape.iter().product::<usize>();
        let header = std::iter::once("model,class".to_string())
            .chain((0..dim).map(|d| format!("w_{d}")))
            .chain(std::iter::once("bias".to_string()))
            .collect::<Vec<_>>()
            .join(",");
        write_lines(&dir.join("boundaries.csv"), &header, rows)?;
    }

    if m.boundary_shift {
        let shifts = boundary_shift(
            &out.model,
            &data.test,
            ShiftConfig {
                temperature: t_train,
                learning_rate: cfg.learning_rate,
                eps_max: m.boundary_eps_max,
                steps: m.boundary_steps,
            },
        )?;
        write_lines(&dir.join("boundary_shift.csv"), "shift", shifts.iter().map(|s| sig6(*s)))?;
        summary.median_boundary_shift = median(&shifts);
    }

    if exp.output.checkpoint {
        checkpoint::save(&out.model.params, &dir.join("model.ckpt"))?;
    }

    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let summary_path = dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, json + "\n").map_err(|e| CliError::io(&summary_path, e))?;

    Ok(Outcome {
        summary,
        records: out.records,
        model: out.model,
        dir,
    })
}

/// Dense and convolution layer ids.
fn weight_layers(model: &Model) -> Vec<usize> {
    model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Dense { .. } | Layer::Conv2d { .. } | Layer::Conv1d { .. }))
        .map(|(i, _)| i)
        .collect()
}

/// One row per class: the class's weight vector and bias.
fn logreg_rows(name: &str, model: &Model) -> Result<Vec<String>> {
    let (w, b) = match (model.params.find("fc1.weight"), model.params.find("fc1.bias")) {
        (Some(w), Some(b)) => (&w.tensor, &b.tensor),
        _ => return Err(CliError::Config("boundaries need a logistic-regression model".into())),
    };
    let dim = w.row_len();
    Ok((0..b.len())
        .map(|c| {
            let weights: Vec<String> = w.data()[c * dim..(c + 1) * dim].iter().map(|v| sig6(*v)).collect();
            format!("{name},{c},{},{}", weights.join(","), sig6(b.data()[c]))
        })
        .collect())
}
