//! Datasets, loaders, synthetic data and non-i.i.d. partitioners.

pub mod csv;
pub mod idx;
pub mod partition;
pub mod synthetic;

pub use self::csv::load_csv;
pub use idx::load_idx;
pub use partition::{
    dirichlet_proportions, partition_dirichlet, partition_iid, partition_shards, ClientPartition,
};
pub use synthetic::{gen_gaussian_blobs, GaussianBlobs};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Features `[N, ...]` with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() < 2 {
            return Err(Error::invalid("features need a batch axis and at least one feature axis"));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset {
            features,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_classes];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}
