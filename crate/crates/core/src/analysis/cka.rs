//! Linear centered kernel alignment between feature matrices.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// Row-major `[rows, cols]` activations, one row per probe example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "feature matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Copy with every column shifted to zero mean.
    pub fn centered(&self) -> FeatureMatrix {
        let mut means = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= self.rows as f64);
        let data = self
            .data
            .chunks(self.cols)
            .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m))
            .collect();
        FeatureMatrix { data, ..*self }
    }

    /// Row Gram matrix `X X^T`.
    fn gram(&self) -> Vec<f64> {
        let n = self.rows;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let ri = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in i..n {
                let rj = &self.data[j * self.cols..(j + 1) * self.cols];
                let v: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    }
}

fn frobenius_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F)` on column-centered inputs,
/// evaluated through the row Gram matrices.
pub fn linear_cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::invalid(format!("CKA needs equal row counts, got {} and {}", x.rows, y.rows)));
    }
    if x.rows < 2 {
        return Err(Error::invalid("CKA needs at least two rows"));
    }
    let (gx, gy) = (x.centered().gram(), y.centered().gram());
    let xx = frobenius_dot(&gx, &gx).sqrt();
    let yy = frobenius_dot(&gy, &gy).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "a feature matrix has no variance after centering".into(),
        ));
    }
    Ok((frobenius_dot(&gx, &gy) / (xx * yy)).clamp(0.0, 1.0))
}

/// Activations of `layer` for every probe example.
pub fn layer_features(model: &Model, probe: &Dataset, layer: usize) -> Result<FeatureMatrix> {
    let mut out = model.layer_features(probe.features(), &[layer])?;
    let data = out.pop().expect("one layer requested");
    let rows = probe.len();
    FeatureMatrix::new(rows, data.len() / rows, data)
}

/// Pairwise CKA per layer. Index 0 of every matrix is the reference model,
/// index `i + 1` is `models[i]`. Undefined pairs (constant features) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CkaReport {
    pub layers: Vec<usize>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl CkaReport {
    /// CKA of each model against the reference at every layer:
    /// `[layer][model]`.
    pub fn reference_column(&self) -> Vec<Vec<f64>> {
        self.matrices.iter().map(|m| m[1..].iter().map(|row| row[0]).collect()).collect()
    }
}

pub fn cka_report(models: &[&Model], reference: &Model, probe: &Dataset, layers: &[usize]) -> Result<CkaReport> {
    if probe.is_empty() {
        return Err(Error::invalid("CKA probe set is empty"));
    }
    for m in models {
        reference.params.ensure_congruent(&m.params)?;
    }
    let all: Vec<&Model> = std::iter::once(reference).chain(models.iter().copied()).collect();
    let mut matrices = Vec::with_capacity(layers.len());
    for &layer in layers {
        let feats: Vec<FeatureMatrix> = all.iter().map(|m| layer_features(m, probe, layer)).collect::<Result<_>>()?;
        let n = feats.len();
        let mut mat = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = match linear_cka(&feats[i], &feats[j]) {
                    Ok(v) => v,
                    Err(Error::UndefinedSimilarity(msg)) => {
                        log::warn!("layer {layer}, models {i}/{j}: {msg}");
                        f64::NAN
                    }
                    Err(e) => return Err(e),
                };
                mat[i][j] = v;
                mat[j][i] = v;
            }
        }
        matrices.push(mat);
    }
    Ok(CkaReport {
        layers: layers.to_vec(),
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_similarity_and_errors() {
        let x = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.0]).unwrap();
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = FeatureMatrix::new(3, 2, vec![1.0; 6]).unwrap();
        assert!(matches!(linear_cka(&x, &c), Err(Error::UndefinedSimilarity(_))));
        let short = FeatureMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(linear_cka(&x, &short), Err(Error::InvalidArgument(_))));
    }
}
