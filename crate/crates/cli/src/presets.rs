//! Shipped experiment setups.
//!
//! - `toy2d`: three clients, 2-D logistic regression, T in {1.0, 0.5}, one
//!   round of 10 local updates; writes per-model boundary parameters.
//! - `synthetic-noniid`: 10 clients on 10-class Gaussian blobs with
//!   Dirichlet label skew, alpha in {0.1, 0.5, 1.0}, T in {4, 1, 0.25}.
//! - `mnist-idx`: the default federated hyperparameters on user-supplied
//!   MNIST IDX files placed next to the written config.

use std::path::{Path, PathBuf};

use crate::config::{parse_config_with, Override};
use crate::error::{CliError, Result};
use crate::experiment::run_experiment;
use crate::sweep::sweep;

pub const NAMES: [&str; 3] = ["toy2d", "synthetic-noniid", "mnist-idx"];

/// Temperatures compared by the `synthetic-noniid` preset.
pub const NONIID_TEMPERATURES: [&str; 3] = ["4", "1", "0.25"];
/// Heterogeneity levels of the `synthetic-noniid` preset.
pub const NONIID_ALPHAS: [f64; 3] = [0.1, 0.5, 1.0];

pub struct PresetFile {
    pub file_name: String,
    pub text: String,
    /// Key and values to sweep; a single run when absent.
    pub sweep: Option<(&'static str, Vec<String>)>,
}

pub fn toy2d() -> String {
    "\
# 2-D data split across three clients, logistic regression, weights
# averaged after 10 local updates (60 samples, batch 6, 1 epoch).
[federated]
total_clients = 3
participants_per_round = 3
rounds = 1
local_epochs = 1
batch_size = 6
learning_rate = 0.1
lr_decay = 0
temperature = 1.0
seed = 0

[model]
kind = logreg

[data]
source = synthetic
num_classes = 4
dim = 2
spread = 0.5
train_per_class = 45
test_per_class = 50
partition = shards
shard_size = 30
shards_per_client = 2

[metrics]
boundaries = true

[output]
dir = toy2d
"
    .to_string()
}

/// The desk-scale non-i.i.d. setup at one heterogeneity level.
pub fn synthetic_noniid(alpha: f64) -> String {
    format!(
        "\
# 10 clients, Dirichlet label skew, MLP 20-64-10 on 10-class Gaussian blobs.
[federated]
total_clients = 10
participants_per_round = 5
rounds = 100
local_epochs = 2
batch_size = 16
learning_rate = 0.005
lr_decay = 1e-5
temperature = 1.0
client_holdout = 0.2
seed = 0

[model]
kind = mlp
hidden = 64

[data]
source = synthetic
num_classes = 10
dim = 20
spread = 1.0
train_per_class = 100
test_per_class = 50
partition = dirichlet
alpha = {alpha}

[metrics]
calibration = true

[output]
dir = synthetic-noniid-alpha{alpha}
"
    )
}

pub fn mnist_idx() -> String {
    "\
# Default federated hyperparameters on MNIST. Put the four IDX files next to
# this file.
[federated]
total_clients = 50
participants_per_round = 10
rounds = 300
local_epochs = 10
batch_size = 16
learning_rate = 0.001
lr_decay = 1e-5
temperature = 0.25
client_holdout = 0.1
seed = 0

[model]
kind = mlp
hidden = 512, 256, 128

[data]
source = idx
train_images = train-images-idx3-ubyte
train_labels = train-labels-idx1-ubyte
test_images = t10k-images-idx3-ubyte
test_labels = t10k-labels-idx1-ubyte
partition = shards
shard_size = 200
shards_per_client = 2

[metrics]
gradient_norms = true
calibration = true

[output]
dir = mnist-idx
"
    .to_string()
}

pub fn preset_files(name: &str) -> Result<Vec<PresetFile>> {
    let temps = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(match name {
        "toy2d" => vec![PresetFile {
            file_name: "toy2d.cfg".into(),
            text: toy2d(),
            sweep: Some(("temperature", temps(&["1.0", "0.5"]))),
        }],
        "synthetic-noniid" => NONIID_ALPHAS
            .iter()
            .map(|&a| PresetFile {
                file_name: format!("synthetic-noniid-alpha{a}.cfg"),
                text: synthetic_noniid(a),
                sweep: Some(("temperature", temps(&NONIID_TEMPERATURES))),
            })
            .collect(),
        "mnist-idx" => vec![PresetFile {
            file_name: "mnist-idx.cfg".into(),
            text: mnist_idx(),
            sweep: None,
        }],
        other => {
            return Err(CliError::Config(format!("unknown preset {other:?} (one of {})", NAMES.join(", "))));
        }
    })
}

/// Writes the preset's config files into `out` and, unless `write_only`,
/// runs each of them. Returns the written config paths.
pub fn run_preset(name: &str, out: &Path, overrides: &[Override], write_only: bool) -> Result<Vec<PathBuf>> {
    let files = preset_files(name)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::with_capacity(files.len());
    for f in &files {
        let path = out.join(&f.file_name);
        std::fs::write(&path, &f.text).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    if write_only {
        return Ok(written);
    }
    for (f, path) in files.iter().zip(&written) {
        match &f.sweep {
            Some((key, values)) => {
                sweep(path, key, values, overrides, None, false)?;
            }
            None => {
                run_experiment(&parse_config_with(path, overrides)?)?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    #[test]
    fn every_preset_parses() {
        for name in NAMES {
            for f in preset_files(name).unwrap() {
                let exp = parse_str(&f.text, &Path::new("/p").join(&f.file_name), &[]);
                assert!(exp.is_ok(), "{name}/{}: {:?}", f.file_name, exp.err());
            }
        }
    }

    #[test]
    fn toy2d_gives_ten_local_updates_per_client() {
        let exp = parse_str(&toy2d(), Path::new("/p/toy2d.cfg"), &[]).unwrap();
        let c = &exp.config;
        let per_client = 4 * 45 / c.total_clients;
        assert_eq!(per_client.div_ceil(c.batch_size) * c.local_epochs, 10);
        assert_eq!(c.total_clients, 3);
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        assert_eq!(preset_files("cifar").err().map(|e| e.exit_code()), Some(2));
    }
}
