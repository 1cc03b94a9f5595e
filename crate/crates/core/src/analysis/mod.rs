//! Measurements: accuracy, entropy, convergence speed, linear CKA,
//! calibration, input-gradient norms and decision-boundary distance.

pub mod boundary;
pub mod calibration;
pub mod cka;
pub mod delta;
pub mod gradients;
pub mod metrics;

pub use boundary::{boundary_distance, boundary_shift, signed_position, ShiftConfig};
pub use calibration::{bin_index, calibration, calibration_from, CalibrationReport};
pub use cka::{cka_report, layer_features, linear_cka, CkaReport, FeatureMatrix};
pub use delta::{pre_post_aggregation_delta, AggregationDeltas};
pub use gradients::{histogram, histogram_mode, input_gradient_norms, median, GradientNorms};
pub use metrics::{entropy, evaluate, output_entropy, predictions, rounds_to_target, speedup, Predictions};
