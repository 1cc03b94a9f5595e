use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexchill_cli::{parse_config_with, run_experiment, run_preset, sweep, CliError, Override};

/// Federated learning simulator with temperature-scaled local training.
#[derive(Parser)]
#[command(name = "flexchill", version)]
struct Cli {
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment file.
    Run {
        config: PathBuf,
        /// Output directory (default: `dir` from the file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment once per value of one key.
    Sweep {
        config: PathBuf,
        /// temperature, participants_per_round, batch_size, local_epochs,
        /// alpha or learning_rate.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<String>,
        /// Root directory for the per-value runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the values concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Write a shipped setup's config files to a directory and run them.
    Preset {
        /// toy2d, synthetic-noniid or mnist-idx.
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Only write the config files.
        #[arg(long)]
        write_only: bool,
    },
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(Override::new("federated", "seed", seed.to_string()));
    }
    match cli.command {
        Command::Run { config, out } => {
            if let Some(out) = out {
                overrides.push(Override::new("output", "dir", format!("\"{}\"", absolute(&out).display())));
            }
            let exp = parse_config_with(&config, &overrides)?;
            let o = run_experiment(&exp)?;
            match o.summary.final_accuracy {
                Some(acc) => println!("{} rounds, final accuracy {acc:.4}; results in {}", o.summary.rounds, o.dir.display()),
                None => println!("0 rounds; results in {}", o.dir.display()),
            }
        }
        Command::Sweep {
            config,
            key,
            values,
            out,
            parallel,
        } => {
            let out = out.map(|p| absolute(&p));
            let m = sweep(&config, &key, &values, &overrides, out.as_deref(), parallel)?;
            for r in &m.runs {
                let acc = r.final_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
                println!("{} = {}: final accuracy {acc}; {}", m.key, r.value, r.dir.display());
            }
        }
        Command::Preset { name, out, write_only } => {
            for path in run_preset(&name, &out, &overrides, write_only)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flexchill: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
