//! One run per value of a single key, each in its own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{parse_config_with, sweep_section, Override, SWEEPABLE};
use crate::error::{CliError, Result};
use crate::experiment::run_experiment;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: String,
    pub dir: PathBuf,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PathBuf,
    pub key: String,
    pub runs: Vec<SweepRun>,
}

/// Directory name for one value, e.g. `temperature_0.25`.
pub fn run_dir_name(key: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{key}_{clean}")
}

/// Runs `config` once per value of `key`. All configurations are parsed
/// before the first run starts. `out` defaults to the file's output
/// directory; `parallel` runs the values on separate threads.
pub fn sweep(
    config: &Path,
    key: &str,
    values: &[String],
    overrides: &[Override],
    out: Option<&Path>,
    parallel: bool,
) -> Result<Manifest> {
    let section = sweep_section(key).ok_or_else(|| {
        let keys: Vec<&str> = SWEEPABLE.iter().map(|(k, _)| *k).collect();
        CliError::Config(format!("`{key}` is not sweepable (one of {})", keys.join(", ")))
    })?;
    let values: Vec<&String> = values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let root = match out {
        Some(dir) => dir.to_path_buf(),
        None => parse_config_with(config, overrides)?.output.dir,
    };
    let mut experiments = Vec::with_capacity(values.len());
    for value in &values {
        let dir = root.join(run_dir_name(key, value));
        let mut ov = overrides.to_vec();
        ov.push(Override::new(section, key, value.trim()));
        ov.push(Override::new("output", "dir", format!("\"{}\"", dir.display())));
        let exp = parse_config_with(config, &ov)?;
        if section == "data" && !matches!(exp.config.partition, flexchill_core::PartitionSpec::Dirichlet { .. }) {
            return Err(CliError::Config("sweeping alpha needs partition = dirichlet".into()));
        }
        experiments.push(exp);
    }

    let outcomes: Vec<Result<SweepRun>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = experiments.iter().zip(&values).map(|(exp, v)| s.spawn(move || one(exp, v))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep run panicked")).collect()
        })
    } else {
        experiments.iter().zip(&values).map(|(exp, v)| one(exp, v)).collect()
    };
    let manifest = Manifest {
        config: config.to_path_buf(),
        key: key.to_string(),
        runs: outcomes.into_iter().collect::<Result<_>>()?,
    };
    std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}

fn one(exp: &crate::config::ExperimentFile, value: &str) -> Result<SweepRun> {
    let o = run_experiment(exp)?;
    Ok(SweepRun {
        value: value.trim().to_string(),
        dir: o.dir,
        final_accuracy: o.summary.final_accuracy,
        best_accuracy: o.summary.best_accuracy,
        rounds_to_target: o.summary.rounds_to_target,
    })
}
