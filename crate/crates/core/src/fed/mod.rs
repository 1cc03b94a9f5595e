//! Federated training: FedAvg, FedProx, SCAFFOLD and FedBN around a
//! temperature-scaled local update.

pub mod aggregate;
pub mod client;
pub mod config;
pub mod run;

pub use aggregate::{aggregate, sample_clients, sample_count_weights};
pub use client::{
    client_update, client_update_fedprox, client_update_scaffold, local_steps, local_train, proximal_penalty,
    ControlState, LocalContext, LocalOutcome,
};
pub use config::{Algorithm, FLConfig, PartitionSpec};
pub use run::{run_federated, run_federated_with, RoundRecord, RoundSnapshot, RunOptions, RunOutput, THREADS_ENV};
