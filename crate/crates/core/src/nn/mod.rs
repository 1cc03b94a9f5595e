//! Tensor engine: reverse-mode autodiff, temperature-scaled loss, SGD.

pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_at, finite_difference_gradient, relative_error};
pub use loss::{argmax, ce_logit_gradient, softmax_t};
pub use optim::{effective_lr, sgd_step};
pub use params::{ParamEntry, ParamSet, Role};
pub use tape::{BatchStats, Reduction, Tape, Var};
pub use tensor::Tensor;
