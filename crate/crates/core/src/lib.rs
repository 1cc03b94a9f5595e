//! Federated learning simulator with temperature-scaled ("chilled") local
//! training.
//!
//! Layers, from the bottom up:
//!
//! - [`nn`]: a small `f64` tensor engine with reverse-mode autodiff, the
//!   temperature-scaled softmax cross entropy, and SGD.
//! - [`model`]: the MLP / CNN / 1-D CNN / logistic-regression architectures
//!   and the checkpoint format.
//! - [`data`]: IDX and CSV loaders, Gaussian blobs, shard and Dirichlet
//!   partitioners.
//! - [`fed`]: the federated loop with FedAvg, FedProx, SCAFFOLD and FedBN.
//! - [`analysis`]: evaluation, convergence speed, entropy, linear CKA,
//!   calibration, input-gradient norms and decision-boundary distance.

pub mod analysis;
pub mod data;
pub mod error;
pub mod fed;
pub mod model;
pub mod nn;
pub mod rng;

pub use data::{ClientPartition, Dataset};
pub use error::{Error, Result};
pub use fed::{Algorithm, FLConfig, PartitionSpec, RoundRecord};
pub use model::{build_model, Model, ModelKind, ModelSpec};
pub use nn::{ParamSet, Role, Tape, Tensor, Var};
