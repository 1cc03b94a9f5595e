//! Experiment files, presets, sweeps and result files for the `flexchill`
//! command.

pub mod config;
pub mod error;
pub mod experiment;
pub mod format;
pub mod presets;
pub mod sweep;

pub use config::{parse_config, parse_config_with, parse_str, ExperimentFile, Override};
pub use error::{CliError, Result, EXIT_CONFIG, EXIT_RUNTIME};
pub use experiment::{run_experiment, Outcome, Summary, CSV_HEADER};
pub use presets::run_preset;
pub use sweep::{sweep, Manifest};
