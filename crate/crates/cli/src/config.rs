//! Experiment files: `key = value` lines under `[section]` headers, with `#`
//! comments.
//!
//! Sections are `[federated]`, `[model]`, `[data]`, `[metrics]` and
//! `[output]`. Omitted federated keys take the defaults of `FLConfig` (300
//! rounds, 50 clients, 10 participants, 10 local epochs, batch 16, learning
//! rate 0.001, decay 1e-5).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flexchill_core::{Algorithm, Dataset, FLConfig, ModelKind, ModelSpec, PartitionSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SECTIONS: [&str; 5] = ["federated", "model", "data", "metrics", "output"];

/// Keys accepted by `sweep`, with their section.
pub const SWEEPABLE: [(&str, &str); 6] = [
    ("temperature", "federated"),
    ("participants_per_round", "federated"),
    ("batch_size", "federated"),
    ("local_epochs", "federated"),
    ("alpha", "data"),
    ("learning_rate", "federated"),
];

/// Section of a sweepable key.
pub fn sweep_section(key: &str) -> Option<&'static str> {
    SWEEPABLE.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Gaussian blobs generated from the run seed.
    Synthetic {
        num_classes: usize,
        dim: usize,
        spread: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
    },
}

/// Model section as written; shape and class count may come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDraft {
    pub kind: ModelKind,
    pub input_shape: Option<Vec<usize>>,
    pub num_classes: Option<usize>,
    pub hidden: Vec<usize>,
}

impl Default for ModelDraft {
    fn default() -> Self {
        ModelDraft {
            kind: ModelKind::Mlp,
            input_shape: None,
            num_classes: None,
            hidden: vec![64],
        }
    }
}

impl ModelDraft {
    fn fixed(kind: ModelKind) -> Option<ModelSpec> {
        match kind {
            ModelKind::MlpFemnist => Some(ModelSpec::mlp_femnist()),
            ModelKind::Cnn2Cifar => Some(ModelSpec::cnn2_cifar()),
            ModelKind::Cnn1dHar => Some(ModelSpec::cnn1d_har(128)),
            ModelKind::Logreg2d | ModelKind::Mlp => None,
        }
    }

    /// Explicit values win, then the data's shape and class count, then the
    /// architecture's defaults. Fixed architectures keep their class count.
    pub fn resolve(&self, data_shape: Option<&[usize]>, data_classes: Option<usize>) -> Option<ModelSpec> {
        let base = Self::fixed(self.kind);
        let input_shape = self
            .input_shape
            .clone()
            .or_else(|| data_shape.map(<[usize]>::to_vec))
            .or_else(|| base.as_ref().map(|b| b.input_shape.clone()))?;
        let num_classes = self
            .num_classes
            .or_else(|| base.as_ref().map(|b| b.num_classes))
            .or(data_classes)?;
        Some(ModelSpec {
            kind: self.kind,
            input_shape,
            num_classes,
            hidden: if self.kind == ModelKind::Mlp { self.hidden.clone() } else { vec![] },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub track_deltas: bool,
    pub track_entropy: bool,
    /// Histogram of log10 input-gradient norms of the final model.
    pub gradient_norms: bool,
    pub grad_norm_bins: usize,
    pub grad_norm_log10_min: f64,
    pub grad_norm_log10_max: f64,
    /// Layer-wise CKA between the final global model and the last round's
    /// local models.
    pub cka: bool,
    /// Layer ids; every dense and conv layer when absent.
    pub cka_layers: Option<Vec<usize>>,
    pub cka_probe_size: usize,
    pub calibration: bool,
    pub calibration_bins: usize,
    /// Logistic-regression weights of the final global and local models.
    pub boundaries: bool,
    /// Change in signed boundary distance after one step on each
    /// misclassified test sample.
    pub boundary_shift: bool,
    pub boundary_eps_max: f64,
    pub boundary_steps: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            track_deltas: true,
            track_entropy: true,
            gradient_norms: false,
            grad_norm_bins: 35,
            grad_norm_log10_min: -6.0,
            grad_norm_log10_max: 1.0,
            cka: false,
            cka_layers: None,
            cka_probe_size: 200,
            calibration: false,
            calibration_bins: 10,
            boundaries: false,
            boundary_shift: false,
            boundary_eps_max: 1.0,
            boundary_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Record real wall time per round; otherwise `wall_s` is 0 so repeated
    /// runs produce identical files.
    pub wall_clock: bool,
    /// Save the final global parameters as `model.ckpt`.
    pub checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    /// Run configuration. For data sources whose shape is only known after
    /// loading, `config.model` is provisional until [`ExperimentFile::resolve`].
    pub config: FLConfig,
    pub model: ModelDraft,
    pub data: DataSource,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
    pub threads: Option<usize>,
}

/// A `key = value` applied after the file, e.g. from `--seed` or a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub section: String,
    pub key: String,
    pub value: String,
}

impl Override {
    pub fn new(section: &str, key: &str, value: impl Into<String>) -> Self {
        Override {
            section: section.into(),
            key: key.into(),
            value: value.into(),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentFile> {
    parse_config_with(path, &[])
}

pub fn parse_config_with(path: &Path, overrides: &[Override]) -> Result<ExperimentFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text, path, overrides)
}

/// Parses `text` as if read from `path`; relative paths in the file resolve
/// against the directory of `path`.
pub fn parse_str(text: &str, path: &Path, overrides: &[Override]) -> Result<ExperimentFile> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut b = Builder::new(base);
    let err = |line: usize, msg: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("malformed section header {content:?}")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line, format!("unknown section [{name}] (expected one of {})", SECTIONS.join(", "))));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section
            .as_deref()
            .ok_or_else(|| err(line, format!("key `{key}` appears before any [section] header")))?;
        if let Some(first) = b.lines.get(key) {
            return Err(err(line, format!("duplicate key `{key}` (first set on line {first})")));
        }
        b.apply(sec, key, value).map_err(|m| err(line, m))?;
        b.lines.insert(key.to_string(), line);
    }
    for o in overrides {
        if !SECTIONS.contains(&o.section.as_str()) {
            return Err(CliError::Config(format!("override of `{}`: unknown section [{}]", o.key, o.section)));
        }
        b.apply(&o.section, &o.key, &o.value)
            .map_err(|m| CliError::Config(format!("override `{} = {}`: {m}", o.key, o.value)))?;
        b.lines.remove(&o.key);
    }
    b.finish().map_err(|(keys, msg)| match keys.iter().find_map(|k| b.lines.get(*k)) {
        Some(&line) => err(line, msg),
        None => CliError::Config(format!("{}: {msg}", path.display())),
    })
}

fn value<T: FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got {v:?}"))
}

fn list<T: FromStr>(v: &str, what: &str) -> std::result::Result<Vec<T>, String> {
    let inner = v.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(v);
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(s, what))
        .collect()
}

fn optional<T: FromStr>(v: &str, what: &str) -> std::result::Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        value(v, what).map(Some)
    }
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn text(v: &str) -> String {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v).to_string()
}

const F: &str = "a number";
const U: &str = "a non-negative integer";

/// Raw settings while the file is read; cross-key checks run in `finish`.
struct Builder {
    base: PathBuf,
    lines: HashMap<String, usize>,
    config: FLConfig,
    model: ModelDraft,
    source: String,
    num_classes: Option<usize>,
    dim: usize,
    spread: f64,
    train_per_class: usize,
    test_per_class: usize,
    paths: HashMap<String, PathBuf>,
    partition: String,
    alpha: Option<f64>,
    shard_size: usize,
    shards_per_client: usize,
    metrics: MetricsConfig,
    output: OutputConfig,
    threads: Option<usize>,
}

type Failure = (Vec<&'static str>, String);

impl Builder {
    fn new(base: PathBuf) -> Self {
        let output = OutputConfig {
            dir: base.join("results"),
            wall_clock: false,
            checkpoint: false,
        };
        Builder {
            base,
            lines: HashMap::new(),
            config: FLConfig::default(),
            model: ModelDraft::default(),
            source: "synthetic".into(),
            num_classes: None,
            dim: 20,
            spread: 1.0,
            train_per_class: 2000,
            test_per_class: 100,
            paths: HashMap::new(),
            partition: "shards".into(),
            alpha: None,
            shard_size: 200,
            shards_per_client: 2,
            metrics: MetricsConfig::default(),
            output,
            threads: None,
        }
    }

    fn path(&self, v: &str) -> PathBuf {
        self.base.join(text(v))
    }

    fn apply(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let c = &mut self.config;
        let m = &mut self.metrics;
        match (section, key) {
            ("federated", "total_clients") => c.total_clients = value(v, U)?,
            ("federated", "rounds") => c.rounds = value(v, U)?,
            ("federated", "participants_per_round") => c.participants_per_round = value(v, U)?,
            ("federated", "local_epochs") => c.local_epochs = value(v, U)?,
            ("federated", "batch_size") => c.batch_size = value(v, U)?,
            ("federated", "learning_rate") => c.learning_rate = value(v, F)?,
            ("federated", "lr_decay") => c.lr_decay = value(v, F)?,
            ("federated", "temperature") => c.temperature = value(v, F)?,
            ("federated", "temperature_schedule") => {
                c.temperature_schedule = if v == "none" { None } else { Some(list(v, "a list of numbers")?) }
            }
            ("federated", "eval_temperature") => c.eval_temperature = optional(v, F)?,
            ("federated", "algorithm") => c.algorithm = Algorithm::parse(&text(v)).map_err(|e| e.to_string())?,
            ("federated", "fedprox_mu") => c.fedprox_mu = value(v, F)?,
            ("federated", "seed") => c.seed = value(v, U)?,
            ("federated", "target_accuracy") => c.target_accuracy = optional(v, F)?,
            ("federated", "client_holdout") => c.client_holdout = value(v, F)?,
            ("federated", "threads") => self.threads = optional(v, U)?,
            ("model", "kind") => self.model.kind = ModelKind::parse(&text(v)).map_err(|e| e.to_string())?,
            ("model", "input_shape") => self.model.input_shape = Some(list(v, "a list of integers")?),
            ("model", "num_classes") => self.model.num_classes = Some(value(v, U)?),
            ("model", "hidden") => self.model.hidden = list(v, "a list of integers")?,
            ("data", "source") => self.source = text(v),
            ("data", "num_classes") => self.num_classes = Some(value(v, U)?),
            ("data", "dim") => self.dim = value(v, U)?,
            ("data", "spread") => self.spread = value(v, F)?,
            ("data", "train_per_class") => self.train_per_class = value(v, U)?,
            ("data", "test_per_class") => self.test_per_class = value(v, U)?,
            ("data", "train_images" | "train_labels" | "test_images" | "test_labels" | "train_csv" | "test_csv") => {
                let p = self.path(v);
                self.paths.insert(key.to_string(), p);
            }
            ("data", "partition") => self.partition = text(v),
            ("data", "alpha") => self.alpha = Some(value(v, F)?),
            ("data", "shard_size") => self.shard_size = value(v, U)?,
            ("data", "shards_per_client") => self.shards_per_client = value(v, U)?,
            ("metrics", "track_deltas") => m.track_deltas = flag(v)?,
            ("metrics", "track_entropy") => m.track_entropy = flag(v)?,
            ("metrics", "gradient_norms") => m.gradient_norms = flag(v)?,
            ("metrics", "grad_norm_bins") => m.grad_norm_bins = value(v, U)?,
            ("metrics", "grad_norm_log10_min") => m.grad_norm_log10_min = value(v, F)?,
            ("metrics", "grad_norm_log10_max") => m.grad_norm_log10_max = value(v, F)?,
            ("metrics", "cka") => m.cka = flag(v)?,
            ("metrics", "cka_layers") => m.cka_layers = Some(list(v, "a list of integers")?),
            ("metrics", "cka_probe_size") => m.cka_probe_size = value(v, U)?,
            ("metrics", "calibration") => m.calibration = flag(v)?,
            ("metrics", "calibration_bins") => m.calibration_bins = value(v, U)?,
            ("metrics", "boundaries") => m.boundaries = flag(v)?,
            ("metrics", "boundary_shift") => m.boundary_shift = flag(v)?,
            ("metrics", "boundary_eps_max") => m.boundary_eps_max = value(v, F)?,
            ("metrics", "boundary_steps") => m.boundary_steps = value(v, U)?,
            ("output", "dir") => self.output.dir = self.path(v),
            ("output", "wall_clock") => self.output.wall_clock = flag(v)?,
            ("output", "checkpoint") => self.output.checkpoint = flag(v)?,
            _ => return Err(format!("unknown key `{key}` in [{section}]")),
        }
        Ok(())
    }

    fn take_path(&self, key: &'static str) -> std::result::Result<PathBuf, Failure> {
        self.paths
            .get(key)
            .cloned()
            .ok_or_else(|| (vec!["source"], format!("source = {} needs `{key}`", self.source)))
    }

    fn finish(&self) -> std::result::Result<ExperimentFile, Failure> {
        let fail = |keys: &[&'static str], msg: String| -> Failure { (keys.to_vec(), msg) };
        let data = match self.source.as_str() {
            "synthetic" => {
                if self.spread <= 0.0 || self.dim == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
                    return Err(fail(
                        &["spread", "dim", "train_per_class", "test_per_class"],
                        "synthetic data needs positive spread, dim and per-class counts".into(),
                    ));
                }
                DataSource::Synthetic {
                    num_classes: self.num_classes.unwrap_or(10),
                    dim: self.dim,
                    spread: self.spread,
                    train_per_class: self.train_per_class,
                    test_per_class: self.test_per_class,
                }
            }
            "idx" => DataSource::Idx {
                train_images: self.take_path("train_images")?,
                train_labels: self.take_path("train_labels")?,
                test_images: self.take_path("test_images")?,
                test_labels: self.take_path("test_labels")?,
            },
            "csv" => DataSource::Csv {
                train: self.take_path("train_csv")?,
                test: self.take_path("test_csv")?,
                num_classes: self
                    .num_classes
                    .ok_or_else(|| fail(&["source"], "source = csv needs `num_classes`".into()))?,
            },
            other => return Err(fail(&["source"], format!("unknown data source {other:?} (synthetic, idx, csv)"))),
        };
        if let DataSource::Synthetic { num_classes: 0..=1, .. } = data {
            return Err(fail(&["num_classes"], "synthetic data needs at least 2 classes".into()));
        }

        let mut config = self.config.clone();
        config.partition = match self.partition.as_str() {
            "iid" => PartitionSpec::Iid,
            "shards" => PartitionSpec::Shards {
                shard_size: self.shard_size,
                shards_per_client: self.shards_per_client,
            },
            "dirichlet" => PartitionSpec::Dirichlet {
                alpha: self
                    .alpha
                    .ok_or_else(|| fail(&["partition"], "partition = dirichlet needs `alpha`".into()))?,
            },
            other => return Err(fail(&["partition"], format!("unknown partition {other:?} (iid, shards, dirichlet)"))),
        };

        let known = match &data {
            DataSource::Synthetic { num_classes, dim, .. } => self.model.resolve(Some(&[*dim]), Some(*num_classes)),
            _ => self.model.resolve(None, None),
        };
        config.model = known.unwrap_or_else(|| ModelSpec::logreg(1, 2));
        config.validate().map_err(|e| fail(&blame(&e.to_string()), e.to_string()))?;
        if let DataSource::Synthetic { num_classes, dim, .. } = data {
            check_compatible(&config.model, &[dim], num_classes).map_err(|m| fail(&["kind", "input_shape", "num_classes"], m))?;
        }

        let m = &self.metrics;
        if m.grad_norm_bins == 0 || m.calibration_bins == 0 {
            return Err(fail(&["grad_norm_bins", "calibration_bins"], "histogram bin counts must be at least 1".into()));
        }
        if !(m.grad_norm_log10_min < m.grad_norm_log10_max) {
            return Err(fail(&["grad_norm_log10_min", "grad_norm_log10_max"], "grad_norm_log10_min must be below grad_norm_log10_max".into()));
        }
        if m.cka_probe_size < 2 {
            return Err(fail(&["cka_probe_size"], "cka_probe_size must be at least 2".into()));
        }
        if m.boundary_steps < 2 || !(m.boundary_eps_max > 0.0) {
            return Err(fail(&["boundary_steps", "boundary_eps_max"], "boundary search needs steps >= 2 and eps_max > 0".into()));
        }
        if m.boundaries && self.model.kind != ModelKind::Logreg2d {
            return Err(fail(&["boundaries"], "boundaries = true needs model kind logreg".into()));
        }
        if self.threads == Some(0) {
            return Err(fail(&["threads"], "threads must be at least 1".into()));
        }
        Ok(ExperimentFile {
            config,
            model: self.model.clone(),
            data,
            metrics: m.clone(),
            output: self.output.clone(),
            threads: self.threads,
        })
    }
}

/// Keys named in a validation message, so the error can point at a line.
fn blame(msg: &str) -> Vec<&'static str> {
    const KEYS: [&str; 20] = [
        "participants_per_round",
        "total_clients",
        "local_epochs",
        "batch_size",
        "learning_rate",
        "lr_decay",
        "temperature_schedule",
        "eval_temperature",
        "temperature",
        "fedprox_mu",
        "scaffold",
        "target_accuracy",
        "client_holdout",
        "alpha",
        "shard_size",
        "shards_per_client",
        "input",
        "output width",
        "classes",
        "hidden",
    ];
    KEYS.into_iter()
        .filter(|k| msg.contains(k))
        .flat_map(|k| match k {
            "scaffold" => vec!["algorithm", "learning_rate"],
            "input" => vec!["input_shape", "kind"],
            "output width" | "classes" => vec!["num_classes", "kind"],
            "shard_size" => vec!["shard_size", "shards_per_client"],
            other => vec![other],
        })
        .collect()
}

fn check_compatible(spec: &ModelSpec, shape: &[usize], num_classes: usize) -> std::result::Result<(), String> {
    if spec.input_shape != shape {
        return Err(format!(
            "model input shape {:?} does not match the data's sample shape {shape:?}",
            spec.input_shape
        ));
    }
    if spec.num_classes < num_classes {
        return Err(format!(
            "model has {} outputs but the data has {num_classes} classes",
            spec.num_classes
        ));
    }
    Ok(())
}

impl ExperimentFile {
    /// The run configuration with the model fixed against the loaded
    /// training set.
    pub fn resolve(&self, train: &Dataset) -> Result<FLConfig> {
        let mut config = self.config.clone();
        config.model = self
            .model
            .resolve(Some(train.sample_shape()), Some(train.num_classes()))
            .ok_or_else(|| CliError::Config("model shape could not be determined".into()))?;
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        check_compatible(&config.model, train.sample_shape(), train.num_classes()).map_err(CliError::Config)?;
        Ok(config)
    }

    /// The experiment as file text; parsing it back gives an equal value.
    /// Paths are written as absolute or as given relative to `base`.
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let path = |p: &Path| format!("\"{}\"", p.display());
        let _ = writeln!(s, "[federated]");
        let _ = writeln!(s, "total_clients = {}", c.total_clients);
        let _ = writeln!(s, "rounds = {}", c.rounds);
        let _ = writeln!(s, "participants_per_round = {}", c.participants_per_round);
        let _ = writeln!(s, "local_epochs = {}", c.local_epochs);
        let _ = writeln!(s, "batch_size = {}", c.batch_size);
        let _ = writeln!(s, "learning_rate = {}", c.learning_rate);
        let _ = writeln!(s, "lr_decay = {}", c.lr_decay);
        let _ = writeln!(s, "temperature = {}", c.temperature);
        let schedule = c.temperature_schedule.as_ref().map_or("none".to_string(), |v| {
            v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
        });
        let _ = writeln!(s, "temperature_schedule = {schedule}");
        let _ = writeln!(s, "eval_temperature = {}", opt(c.eval_temperature));
        let _ = writeln!(s, "algorithm = {}", c.algorithm.name());
        let _ = writeln!(s, "fedprox_mu = {}", c.fedprox_mu);
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "target_accuracy = {}", opt(c.target_accuracy));
        let _ = writeln!(s, "client_holdout = {}", c.client_holdout);
        let _ = writeln!(s, "threads = {}", self.threads.map_or("none".to_string(), |t| t.to_string()));

        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "kind = {}", self.model.kind.name());
        if let Some(shape) = &self.model.input_shape {
            let _ = writeln!(s, "input_shape = {}", join(shape));
        }
        if let Some(n) = self.model.num_classes {
            let _ = writeln!(s, "num_classes = {n}");
        }
        let _ = writeln!(s, "hidden = {}", join(&self.model.hidden));

        let _ = writeln!(s, "\n[data]");
        match &self.data {
            DataSource::Synthetic {
                num_classes,
                dim,
                spread,
                train_per_class,
                test_per_class,
            } => {
                let _ = writeln!(s, "source = synthetic");
                let _ = writeln!(s, "num_classes = {num_classes}");
                let _ = writeln!(s, "dim = {dim}");
                let _ = writeln!(s, "spread = {spread}");
                let _ = writeln!(s, "train_per_class = {train_per_class}");
                let _ = writeln!(s, "test_per_class = {test_per_class}");
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let _ = writeln!(s, "source = idx");
                let _ = writeln!(s, "train_images = {}", path(train_images));
                let _ = writeln!(s, "train_labels = {}", path(train_labels));
                let _ = writeln!(s, "test_images = {}", path(test_images));
                let _ = writeln!(s, "test_labels = {}", path(test_labels));
            }
            DataSource::Csv { train, test, num_classes } => {
                let _ = writeln!(s, "source = csv");
                let _ = writeln!(s, "train_csv = {}", path(train));
                let _ = writeln!(s, "test_csv = {}", path(test));
                let _ = writeln!(s, "num_classes = {num_classes}");
            }
        }
        match c.partition {
            PartitionSpec::Iid => {
                let _ = writeln!(s, "partition = iid");
            }
            PartitionSpec::Shards {
                shard_size,
                shards_per_client,
            } => {
                let _ = writeln!(s, "partition = shards");
                let _ = writeln!(s, "shard_size = {shard_size}");
                let _ = writeln!(s, "shards_per_client = {shards_per_client}");
            }
            PartitionSpec::Dirichlet { alpha } => {
                let _ = writeln!(s, "partition = dirichlet");
                let _ = writeln!(s, "alpha = {alpha}");
            }
        }

        let m = &self.metrics;
        let _ = writeln!(s, "\n[metrics]");
        let _ = writeln!(s, "track_deltas = {}", m.track_deltas);
        let _ = writeln!(s, "track_entropy = {}", m.track_entropy);
        let _ = writeln!(s, "gradient_norms = {}", m.gradient_norms);
        let _ = writeln!(s, "grad_norm_bins = {}", m.grad_norm_bins);
        let _ = writeln!(s, "grad_norm_log10_min = {}", m.grad_norm_log10_min);
        let _ = writeln!(s, "grad_norm_log10_max = {}", m.grad_norm_log10_max);
        let _ = writeln!(s, "cka = {}", m.cka);
        if let Some(layers) = &m.cka_layers {
            let _ = writeln!(s, "cka_layers = {}", join(layers));
        }
        let _ = writeln!(s, "cka_probe_size = {}", m.cka_probe_size);
        let _ = writeln!(s, "calibration = {}", m.calibration);
        let _ = writeln!(s, "calibration_bins = {}", m.calibration_bins);
        let _ = writeln!(s, "boundaries = {}", m.boundaries);
        let _ = writeln!(s, "boundary_shift = {}", m.boundary_shift);
        let _ = writeln!(s, "boundary_eps_max = {}", m.boundary_eps_max);
        let _ = writeln!(s, "boundary_steps = {}", m.boundary_steps);

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", path(&self.output.dir));
        let _ = writeln!(s, "wall_clock = {}", self.output.wall_clock);
        let _ = writeln!(s, "checkpoint = {}", self.output.checkpoint);
        s
    }
}
