//! Architectures and a uniform forward / predict surface.

pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::argmax;
use crate::nn::{BatchStats, ParamSet, Role, Tape, Tensor, Var};
use crate::rng::{stream_rng, Stream};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Rows per forward pass when evaluating large inputs.
pub const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// 784-512-256-128-62 MLP.
    MlpFemnist,
    /// Two conv blocks and two dense layers on 3x32x32 input.
    Cnn2Cifar,
    /// Four conv/batch-norm blocks over a 1-channel series, 6 classes.
    Cnn1dHar,
    /// Multinomial logistic regression.
    Logreg2d,
    /// MLP with configurable hidden widths.
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MlpFemnist => "mlp_femnist",
            ModelKind::Cnn2Cifar => "cnn2_cifar",
            ModelKind::Cnn1dHar => "cnn1d_har",
            ModelKind::Logreg2d => "logreg_2d",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mlp_femnist" => ModelKind::MlpFemnist,
            "cnn2_cifar" => ModelKind::Cnn2Cifar,
            "cnn1d_har" => ModelKind::Cnn1dHar,
            "logreg_2d" | "logreg" => ModelKind::Logreg2d,
            "mlp" => ModelKind::Mlp,
            other => return Err(Error::invalid(format!("unknown model kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-sample input shape (without the batch axis).
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    /// Hidden widths; only read by [`ModelKind::Mlp`].
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn mlp_femnist() -> Self {
        ModelSpec {
            kind: ModelKind::MlpFemnist,
            input_shape: vec![784],
            num_classes: 62,
            hidden: vec![],
        }
    }

    pub fn cnn2_cifar() -> Self {
        ModelSpec {
            kind: ModelKind::Cnn2Cifar,
            input_shape: vec![3, 32, 32],
            num_classes: 10,
            hidden: vec![],
        }
    }

    pub fn cnn1d_har(length: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Cnn1dHar,
            input_shape: vec![1, length],
            num_classes: 6,
            hidden: vec![],
        }
    }

    pub fn logreg(dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logreg2d,
            input_shape: vec![dim],
            num_classes,
            hidden: vec![],
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape: vec![input_dim],
            num_classes,
            hidden,
        }
    }

    fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("{}: {msg}", self.kind.name())));
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return bad(format!("bad input shape {:?}", self.input_shape));
        }
        match self.kind {
            ModelKind::MlpFemnist => {
                if self.input_len() != 784 {
                    return bad(format!("input must have 784 values, got {:?}", self.input_shape));
                }
                if self.num_classes != 62 {
                    return bad(format!("output width is 62, got {}", self.num_classes));
                }
            }
            ModelKind::Cnn2Cifar => {
                if self.input_shape != [3, 32, 32] {
                    return bad(format!("input must be [3, 32, 32], got {:?}", self.input_shape));
                }
                if self.num_classes != 10 {
                    return bad(format!("output width is 10, got {}", self.num_classes));
                }
            }
            ModelKind::Cnn1dHar => {
                if self.input_shape.len() != 2 || self.input_shape[0] != 1 || self.input_shape[1] < 8 {
                    return bad(format!("input must be [1, L] with L >= 8, got {:?}", self.input_shape));
                }
                if self.num_classes != 6 {
                    return bad(format!("output width is 6, got {}", self.num_classes));
                }
            }
            ModelKind::Logreg2d | ModelKind::Mlp => {
                if self.num_classes < 2 {
                    return bad(format!("need at least 2 classes, got {}", self.num_classes));
                }
                if self.hidden.contains(&0) {
                    return bad("hidden widths must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// One step of the layer plan. Indices point into the model's [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Flatten,
    Dense {
        weight: usize,
        bias: usize,
    },
    Relu,
    Conv2d {
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Conv1d {
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm1d {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
    },
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    AdaptiveAvgPool1d {
        output: usize,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Conv1d { .. } => "conv1d",
            Layer::BatchNorm1d { .. } => "batchnorm1d",
            Layer::MaxPool1d { .. } => "maxpool1d",
            Layer::AdaptiveAvgPool1d { .. } => "adaptive_avg_pool1d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running estimates are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Result of recording a forward pass on a tape.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    /// Output of every layer in plan order (the last one is `logits`).
    pub activations: Vec<Var>,
    /// One variable per parameter entry.
    pub param_vars: Vec<Var>,
    /// `(running_mean index, running_var index, batch stats)` per batch-norm layer.
    pub bn_updates: Vec<(usize, usize, BatchStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub params: ParamSet,
    layers: Vec<Layer>,
}

struct Builder<'r, R: Rng> {
    params: ParamSet,
    layers: Vec<Layer>,
    rng: &'r mut R,
    dense_count: usize,
    conv_count: usize,
    bn_count: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.rng.random_range(-bound..=bound);
        }
        t
    }

    fn dense(&mut self, fan_in: usize, fan_out: usize) -> Result<()> {
        self.dense_count += 1;
        let n = self.dense_count;
        let w = self.uniform(&[fan_out, fan_in], fan_in);
        let weight = self.params.push(format!("fc{n}.weight"), w, Role::Dense)?;
        let bias = self.params.push(format!("fc{n}.bias"), Tensor::zeros(&[fan_out]), Role::Bias)?;
        self.layers.push(Layer::Dense { weight, bias });
        Ok(())
    }

    fn conv2d(&mut self, cin: usize, cout: usize, k: usize) -> Result<()> {
        self.conv_count += 1;
        let n = self.conv_count;
        let w = self.uniform(&[cout, cin, k, k], cin * k * k);
        let weight = self.params.push(format!("conv{n}.weight"), w, Role::Conv)?;
        let bias = self.params.push(format!("conv{n}.bias"), Tensor::zeros(&[cout]), Role::Bias)?;
        self.layers.push(Layer::Conv2d {
            weight,
            bias,
            stride: 1,
            padding: 0,
        });
        Ok(())
    }

    fn conv1d(&mut self, cin: usize, cout: usize, k: usize, padding: usize) -> Result<()> {
        self.conv_count += 1;
        let n = self.conv_count;
        let w = self.uniform(&[cout, cin, k], cin * k);
        let weight = self.params.push(format!("conv{n}.weight"), w, Role::Conv)?;
        let bias = self.params.push(format!("conv{n}.bias"), Tensor::zeros(&[cout]), Role::Bias)?;
        self.layers.push(Layer::Conv1d {
            weight,
            bias,
            stride: 1,
            padding,
        });
        Ok(())
    }

    fn batchnorm(&mut self, channels: usize) -> Result<()> {
        self.bn_count += 1;
        let n = self.bn_count;
        let gamma = self.params.push(
            format!("bn{n}.weight"),
            Tensor::filled(&[channels], 1.0),
            Role::BatchnormAffine,
        )?;
        let beta = self.params.push(format!("bn{n}.bias"), Tensor::zeros(&[channels]), Role::BatchnormAffine)?;
        let running_mean = self.params.push(
            format!("bn{n}.running_mean"),
            Tensor::zeros(&[channels]),
            Role::BatchnormStat,
        )?;
        let running_var = self.params.push(
            format!("bn{n}.running_var"),
            Tensor::filled(&[channels], 1.0),
            Role::BatchnormStat,
        )?;
        self.layers.push(Layer::BatchNorm1d {
            gamma,
            beta,
            running_mean,
            running_var,
        });
        Ok(())
    }

    fn mlp(&mut self, widths: &[usize]) -> Result<()> {
        for (i, pair) in widths.windows(2).enumerate() {
            self.dense(pair[0], pair[1])?;
            if i + 2 < widths.len() {
                self.layers.push(Layer::Relu);
            }
        }
        Ok(())
    }
}

/// Deterministic construction from `(spec, seed)`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let mut b = Builder {
        params: ParamSet::new(),
        layers: Vec::new(),
        rng: &mut rng,
        dense_count: 0,
        conv_count: 0,
        bn_count: 0,
    };
    match spec.kind {
        ModelKind::MlpFemnist => {
            if spec.input_shape.len() > 1 {
                b.layers.push(Layer::Flatten);
            }
            b.mlp(&[784, 512, 256, 128, 62])?;
        }
        ModelKind::Mlp | ModelKind::Logreg2d => {
            if spec.input_shape.len() > 1 {
                b.layers.push(Layer::Flatten);
            }
            let mut widths = vec![spec.input_len()];
            if spec.kind == ModelKind::Mlp {
                widths.extend_from_slice(&spec.hidden);
            }
            widths.push(spec.num_classes);
            b.mlp(&widths)?;
        }
        ModelKind::Cnn2Cifar => {
            b.conv2d(3, 10, 5)?;
            b.layers.push(Layer::Relu);
            b.layers.push(Layer::MaxPool2d { kernel: 2, stride: 2 });
            b.conv2d(10, 20, 5)?;
            b.layers.push(Layer::Relu);
            b.layers.push(Layer::MaxPool2d { kernel: 2, stride: 2 });
            b.layers.push(Layer::Flatten);
            b.dense(500, 256)?;
            b.layers.push(Layer::Relu);
            b.dense(256, 10)?;
        }
        ModelKind::Cnn1dHar => {
            let blocks = [(1, 16, 7, 3), (16, 32, 5, 2), (32, 64, 5, 2), (64, 128, 3, 1)];
            for (i, &(cin, cout, k, p)) in blocks.iter().enumerate() {
                b.conv1d(cin, cout, k, p)?;
                b.batchnorm(cout)?;
                b.layers.push(Layer::Relu);
                if i < 3 {
                    b.layers.push(Layer::MaxPool1d { kernel: 2, stride: 2 });
                } else {
                    b.layers.push(Layer::AdaptiveAvgPool1d { output: 1 });
                }
            }
            b.layers.push(Layer::Flatten);
            b.dense(128, 6)?;
        }
    }
    let (params, layers) = (b.params, b.layers);
    Ok(Model {
        spec: spec.clone(),
        params,
        layers,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn has_batchnorm(&self) -> bool {
        self.params.entries().iter().any(|e| e.role.is_batchnorm())
    }

    /// Replaces the parameters with a congruent set.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.ensure_congruent(&params)?;
        self.params = params;
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() < 2 || shape[1..] != self.spec.input_shape[..] {
            return Err(Error::invalid(format!(
                "input shape {shape:?} does not match [batch, {:?}]",
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `input` on `tape`.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: Mode) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        let pv = self.params.attach(tape);
        let mut h = input;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut bn_updates = Vec::new();
        for layer in &self.layers {
            h = match *layer {
                Layer::Flatten => tape.flatten(h)?,
                Layer::Dense { weight, bias } => tape.linear(h, pv[weight], Some(pv[bias]))?,
                Layer::Relu => tape.relu(h)?,
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => tape.conv2d(h, pv[weight], Some(pv[bias]), stride, padding)?,
                Layer::MaxPool2d { kernel, stride } => tape.maxpool2d(h, kernel, stride)?,
                Layer::Conv1d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => tape.conv1d(h, pv[weight], Some(pv[bias]), stride, padding)?,
                Layer::BatchNorm1d {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let running = match mode {
                        Mode::Train => None,
                        Mode::Eval => Some((
                            self.params.get(running_mean).tensor.data(),
                            self.params.get(running_var).tensor.data(),
                        )),
                    };
                    let (out, stats) = tape.batch_norm(h, pv[gamma], pv[beta], running, BN_EPS)?;
                    if let Some(stats) = stats {
                        bn_updates.push((running_mean, running_var, stats));
                    }
                    out
                }
                Layer::MaxPool1d { kernel, stride } => tape.maxpool1d(h, kernel, stride)?,
                Layer::AdaptiveAvgPool1d { output } => tape.adaptive_avg_pool1d(h, output)?,
            };
            activations.push(h);
        }
        Ok(Forward {
            logits: h,
            activations,
            param_vars: pv,
            bn_updates,
        })
    }

    /// Blends batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[(usize, usize, BatchStats)]) {
        for (mean_idx, var_idx, stats) in updates {
            for (r, b) in self.params.get_mut(*mean_idx).tensor.data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            for (r, b) in self.params.get_mut(*var_idx).tensor.data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }

    /// Mean temperature-scaled loss on one batch in training mode; leaves
    /// gradients on every trainable parameter and updates batch-norm
    /// running statistics.
    pub fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize], temperature: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, xv, Mode::Train)?;
        let loss = tape.ce_loss_t(fwd.logits, labels, temperature)?;
        tape.backward(loss)?;
        self.params.collect_grads(&tape, &fwd.param_vars)?;
        self.apply_bn_updates(&fwd.bn_updates);
        tape.value(loss).item()
    }

    /// Loss without gradients or state updates.
    pub fn loss(&self, x: &Tensor, labels: &[usize], temperature: f64, mode: Mode) -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, xv, mode)?;
        let loss = tape.ce_loss_t(fwd.logits, labels, temperature)?;
        tape.value(loss).item()
    }

    /// Eval-mode logits `[batch, num_classes]`, chunked.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let n = x.shape()[0];
        let mut out = Vec::with_capacity(n * self.spec.num_classes);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let chunk = if start == 0 && end == n { x.clone() } else { x.select_rows(&idx)? };
            let mut tape = Tape::new();
            let xv = tape.constant(chunk);
            let fwd = self.forward(&mut tape, xv, Mode::Eval)?;
            out.extend_from_slice(tape.value(fwd.logits).data());
            start = end;
        }
        Tensor::new(vec![n, self.spec.num_classes], out)
    }

    /// Eval-mode activations of the requested layers, one `[batch, features]`
    /// matrix each (flattened per sample).
    pub fn layer_features(&self, x: &Tensor, layers: &[usize]) -> Result<Vec<Vec<f64>>> {
        if let Some(&bad) = layers.iter().find(|&&l| l >= self.layers.len()) {
            return Err(Error::invalid(format!(
                "layer id {bad} out of range; model has {} layers",
                self.layers.len()
            )));
        }
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(layers.iter().map(|&l| tape.value(fwd.activations[l]).data().to_vec()).collect())
    }

    /// Argmax class per row; independent of any positive temperature.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.data().chunks(self.spec.num_classes).map(argmax).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_invalid() {
        assert!(ModelKind::parse("resnet18").is_err());
        assert_eq!(ModelKind::parse("cnn2_cifar").unwrap(), ModelKind::Cnn2Cifar);
    }

    #[test]
    fn fixed_kinds_check_output_width() {
        let mut s = ModelSpec::mlp_femnist();
        s.num_classes = 10;
        assert!(build_model(&s, 0).is_err());
        let mut s = ModelSpec::cnn2_cifar();
        s.input_shape = vec![1, 28, 28];
        assert!(build_model(&s, 0).is_err());
    }

    #[test]
    fn logreg_parameter_count() {
        let m = build_model(&ModelSpec::logreg(2, 3), 1).unwrap();
        assert_eq!(m.params.num_values(), 9);
    }

    #[test]
    fn predict_rejects_wrong_shape() {
        let m = build_model(&ModelSpec::logreg(2, 3), 1).unwrap();
        assert!(m.predict(&Tensor::zeros(&[4, 3])).is_err());
        assert_eq!(m.predict(&Tensor::zeros(&[4, 2])).unwrap().len(), 4);
    }

    #[test]
    fn logreg_linear_score_example() {
        let mut m = build_model(&ModelSpec::logreg(2, 2), 0).unwrap();
        m.params.get_mut(0).tensor.data_mut().copy_from_slice(&[1.0, 0.0, -1.0, 0.0]);
        m.params.get_mut(1).tensor.data_mut().fill(0.0);
        let x = Tensor::new(vec![1, 2], vec![2.0, 5.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0]);
    }
}
