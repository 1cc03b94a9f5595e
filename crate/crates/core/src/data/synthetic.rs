//! Isotropic Gaussian blobs around seeded class centers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream_rng, Stream};

/// A blob family: class centers are fixed by the seed, so train and test
/// draws (different `draw` ids) share the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlobs {
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    centers: Vec<Vec<f64>>,
}

impl GaussianBlobs {
    /// Centers have standard-normal coordinates; samples add
    /// `spread * N(0, I)` noise.
    pub fn new(num_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::invalid("num_classes and dim must be positive"));
        }
        if !(spread.is_finite() && spread >= 0.0) {
            return Err(Error::invalid(format!("spread must be finite and non-negative, got {spread}")));
        }
        let mut rng = stream_rng(seed, Stream::Data, &[0]);
        let centers = (0..num_classes)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Ok(GaussianBlobs {
            num_classes,
            dim,
            spread,
            seed,
            centers,
        })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Draws `per_class` samples of every class, class-major order.
    pub fn sample(&self, per_class: usize, draw: u64) -> Result<Dataset> {
        if per_class == 0 {
            return Err(Error::invalid("per_class must be positive"));
        }
        let mut rng = stream_rng(self.seed, Stream::Data, &[1, draw]);
        let n = per_class * self.num_classes;
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for (c, center) in self.centers.iter().enumerate() {
            for _ in 0..per_class {
                for &mu in center {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(mu + self.spread * z);
                }
                labels.push(c);
            }
        }
        Dataset::new(Tensor::new(vec![n, self.dim], data)?, labels, self.num_classes)
    }
}

pub fn gen_gaussian_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    GaussianBlobs::new(num_classes, dim, spread, seed)?.sample(per_class, 0)
}
