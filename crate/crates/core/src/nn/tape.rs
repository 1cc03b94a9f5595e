//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node whose inputs are already on the tape, so the
//! node order is a topological order and `backward` is a single reverse
//! sweep that visits each node once.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ChannelLayout, Conv1dGeom, Conv2dGeom};
use crate::nn::loss;
use crate::nn::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Batch statistics produced by a training-mode batch norm, used by callers
/// to update running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeom,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv1dGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool1d {
        x: Var,
        planes: usize,
        length: usize,
        output: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: ChannelLayout,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Reshape {
        x: Var,
    },
    CrossEntropyT {
        logits: Var,
        labels: Vec<usize>,
        temperature: f64,
        probs: Vec<f64>,
        scale: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(false);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::invalid(format!("variable {} is not on this tape", v.0)))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a copy of `t`; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Records `t` as a constant (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Affine map `x W^T + b` for `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        let ws = self.node(w)?.value.shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::invalid(format!(
                "linear: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.node(b)?.value.shape() != [fan_out] {
                return Err(Error::invalid("linear: bias shape mismatch"));
            }
        }
        let y = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            batch,
            fan_in,
            fan_out,
        );
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(vec![batch, fan_out], y)?, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Relu { x }, rg))
    }

    /// 2-D convolution: `x: [B, C, H, W]`, `w: [O, C, KH, KW]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        let ws = self.node(w)?.value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || stride == 0 {
            return Err(Error::invalid(format!(
                "conv2d: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        if xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] {
            return Err(Error::invalid(format!("conv2d: kernel {ws:?} larger than input {xs:?}")));
        }
        let geom = Conv2dGeom {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            out_channels: ws[0],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride,
            padding,
        };
        if let Some(b) = b {
            if self.node(b)?.value.shape() != [geom.out_channels] {
                return Err(Error::invalid("conv2d: bias shape mismatch"));
            }
        }
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = vec![geom.batch, geom.out_channels, geom.out_h(), geom.out_w()];
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// 1-D convolution: `x: [B, C, L]`, `w: [O, C, K]`, `b: [O]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        let ws = self.node(w)?.value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || stride == 0 {
            return Err(Error::invalid(format!(
                "conv1d: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        if xs[2] + 2 * padding < ws[2] {
            return Err(Error::invalid(format!("conv1d: kernel {ws:?} larger than input {xs:?}")));
        }
        let geom = Conv1dGeom {
            batch: xs[0],
            in_channels: xs[1],
            length: xs[2],
            out_channels: ws[0],
            kernel: ws[2],
            stride,
            padding,
        };
        if let Some(b) = b {
            if self.node(b)?.value.shape() != [geom.out_channels] {
                return Err(Error::invalid("conv1d: bias shape mismatch"));
            }
        }
        let y = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = vec![geom.batch, geom.out_channels, geom.out_len()];
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv1d { x, w, b, geom }, rg))
    }

    /// Max pooling over the last two axes of a `[B, C, H, W]` tensor.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        if xs.len() != 4 || kernel == 0 || stride == 0 || xs[2] < kernel || xs[3] < kernel {
            return Err(Error::invalid(format!("maxpool2d: bad input {xs:?} for kernel {kernel}")));
        }
        let (y, argmax) =
            kernels::maxpool2d_forward(self.value(x).data(), xs[0] * xs[1], xs[2], xs[3], kernel, stride);
        let shape = vec![xs[0], xs[1], (xs[2] - kernel) / stride + 1, (xs[3] - kernel) / stride + 1];
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, y)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Max pooling over the last axis of a `[B, C, L]` tensor.
    pub fn maxpool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        if xs.len() != 3 || kernel == 0 || stride == 0 || xs[2] < kernel {
            return Err(Error::invalid(format!("maxpool1d: bad input {xs:?} for kernel {kernel}")));
        }
        let (y, argmax) = kernels::maxpool1d_forward(self.value(x).data(), xs[0] * xs[1], xs[2], kernel, stride);
        let shape = vec![xs[0], xs[1], (xs[2] - kernel) / stride + 1];
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, y)?, Op::MaxPool { x, argmax }, rg))
    }

    pub fn adaptive_avg_pool1d(&mut self, x: Var, output: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        if xs.len() != 3 || output == 0 || output > xs[2] {
            return Err(Error::invalid(format!(
                "adaptive_avg_pool1d: bad input {xs:?} for output {output}"
            )));
        }
        let planes = xs[0] * xs[1];
        let y = kernels::adaptive_avg_pool1d_forward(self.value(x).data(), planes, xs[2], output);
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![xs[0], xs[1], output], y)?,
            Op::AdaptiveAvgPool1d {
                x,
                planes,
                length: xs[2],
                output,
            },
            rg,
        ))
    }

    /// Batch normalization over `[B, C]` or `[B, C, L]` inputs.
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the supplied `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.node(x)?.value.shape().to_vec();
        let layout = match xs.as_slice() {
            [b, c] => ChannelLayout {
                batch: *b,
                channels: *c,
                inner: 1,
            },
            [b, c, l] => ChannelLayout {
                batch: *b,
                channels: *c,
                inner: *l,
            },
            _ => return Err(Error::invalid(format!("batch_norm: unsupported shape {xs:?}"))),
        };
        let c = layout.channels;
        if self.node(gamma)?.value.shape() != [c] || self.node(beta)?.value.shape() != [c] {
            return Err(Error::invalid("batch_norm: affine parameter shape mismatch"));
        }
        let xd = self.value(x).data();
        let (mean, var, stats) = match running {
            None => {
                let n = layout.count();
                if n < 2 {
                    return Err(Error::invalid(
                        "batch_norm: training mode needs more than one value per channel",
                    ));
                }
                let (m, v) = kernels::channel_moments(xd, &layout);
                let unbiased = v.iter().map(|v| v * n as f64 / (n - 1) as f64).collect();
                let stats = BatchStats {
                    mean: m.clone(),
                    var: unbiased,
                };
                (m, v, Some(stats))
            }
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::invalid("batch_norm: running statistics shape mismatch"));
                }
                (m.to_vec(), v.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_apply(
            xd,
            &layout,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let out = self.push(
            Tensor::new(xs, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats: running.is_none(),
            },
            rg,
        );
        Ok((out, stats))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.node(x)?.value.clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Collapses all axes after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = &self.node(x)?.value;
        let shape = vec![v.shape()[0], v.row_len()];
        self.reshape(x, shape)
    }

    /// Temperature-scaled softmax cross entropy with mean reduction.
    pub fn ce_loss_t(&mut self, logits: Var, labels: &[usize], temperature: f64) -> Result<Var> {
        self.ce_loss_t_with(logits, labels, temperature, Reduction::Mean)
    }

    pub fn ce_loss_t_with(
        &mut self,
        logits: Var,
        labels: &[usize],
        temperature: f64,
        reduction: Reduction,
    ) -> Result<Var> {
        let lv = &self.node(logits)?.value;
        let (batch, classes) = match lv.shape() {
            [b, c] => (*b, *c),
            s => return Err(Error::invalid(format!("ce_loss_t: logits must be [batch, C], got {s:?}"))),
        };
        if labels.len() != batch {
            return Err(Error::invalid(format!(
                "ce_loss_t: {} labels for batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("ce_loss_t: label {bad} out of range for {classes} classes")));
        }
        let (nll, probs) = loss::softmax_cross_entropy_rows(lv.data(), labels, classes, temperature)?;
        let scale = match reduction {
            Reduction::Mean => 1.0 / batch as f64,
            Reduction::Sum => 1.0,
        };
        let total: f64 = nll.iter().sum::<f64>() * scale;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropyT {
                logits,
                labels: labels.to_vec(),
                temperature,
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn probabilities(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes.get(loss.0)?.op {
            Op::CrossEntropyT { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let sa = self.node(a)?.value.shape();
        let sb = self.node(b)?.value.shape();
        if sa != sb {
            return Err(Error::invalid(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = &self.node(x)?.value;
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|e| e * factor).collect())?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Scale { x, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.data().iter().sum();
        let rg = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, rg))
    }

    /// Reverse sweep from a scalar `loss`. A second call without [`Tape::reset_grads`]
    /// is a state error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::state("backward already ran on this tape; reset gradients first"));
        }
        let n = self.node(loss)?.value.len();
        if n != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got {n} values")));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Copies the gradient of `v` into `t.grad` (zeros if `v` was unreachable).
    pub fn write_grad(&self, v: Var, t: &mut Tensor) -> Result<()> {
        if !self.backward_done {
            return Err(Error::state("write_grad before backward"));
        }
        let g = self.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        t.set_grad(g)
    }

    fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
        if !nodes[v.0].requires_grad {
            return None;
        }
        let len = nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    /// Pushes gradient `g` of node `i` into its inputs.
    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (batch, fan_in) = (xs[0], xs[1]);
                let fan_out = nodes[w.0].value.shape()[0];
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                let mut dx = Self::take_slot(grads, nodes, *x);
                let mut dw = Self::take_slot(grads, nodes, *w);
                let mut db = b.and_then(|b| Self::take_slot(grads, nodes, b));
                kernels::linear_backward(
                    g,
                    xd,
                    wd,
                    batch,
                    fan_in,
                    fan_out,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                Self::store(grads, *x, dx);
                Self::store(grads, *w, dw);
                if let Some(b) = b {
                    Self::store(grads, *b, db);
                }
            }
            Op::Relu { x } => {
                let xd = nodes[x.0].value.data();
                if let Some(dx) = Self::slot(grads, nodes, *x) {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(g) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                let mut dx = Self::take_slot(grads, nodes, *x);
                let mut dw = Self::take_slot(grads, nodes, *w);
                let mut db = b.and_then(|b| Self::take_slot(grads, nodes, b));
                kernels::conv2d_backward(g, xd, wd, geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                Self::store(grads, *x, dx);
                Self::store(grads, *w, dw);
                if let Some(b) = b {
                    Self::store(grads, *b, db);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                let mut dx = Self::take_slot(grads, nodes, *x);
                let mut dw = Self::take_slot(grads, nodes, *w);
                let mut db = b.and_then(|b| Self::take_slot(grads, nodes, b));
                kernels::conv1d_backward(g, xd, wd, geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                Self::store(grads, *x, dx);
                Self::store(grads, *w, dw);
                if let Some(b) = b {
                    Self::store(grads, *b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = Self::slot(grads, nodes, *x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::AdaptiveAvgPool1d {
                x,
                planes,
                length,
                output,
            } => {
                if let Some(dx) = Self::slot(grads, nodes, *x) {
                    kernels::adaptive_avg_pool1d_backward(g, *planes, *length, *output, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let gd = nodes[gamma.0].value.data();
                let mut dx = Self::take_slot(grads, nodes, *x);
                let mut dgamma = Self::take_slot(grads, nodes, *gamma);
                let mut dbeta = Self::take_slot(grads, nodes, *beta);
                kernels::batchnorm_backward(
                    g,
                    xhat,
                    inv_std,
                    gd,
                    layout,
                    *batch_stats,
                    dx.as_deref_mut(),
                    dgamma.as_deref_mut(),
                    dbeta.as_deref_mut(),
                );
                Self::store(grads, *x, dx);
                Self::store(grads, *gamma, dgamma);
                Self::store(grads, *beta, dbeta);
            }
            Op::Reshape { x } => {
                if let Some(dx) = Self::slot(grads, nodes, *x) {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::CrossEntropyT {
                logits,
                labels,
                temperature,
                probs,
                scale,
            } => {
                let classes = probs.len() / labels.len();
                let k = g[0] * scale / temperature;
                if let Some(dz) = Self::slot(grads, nodes, *logits) {
                    for (row, &label) in labels.iter().enumerate() {
                        let p = &probs[row * classes..(row + 1) * classes];
                        let d = &mut dz[row * classes..(row + 1) * classes];
                        for (j, (dj, &pj)) in d.iter_mut().zip(p).enumerate() {
                            let y = if j == label { 1.0 } else { 0.0 };
                            *dj += k * (pj - y);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = Self::slot(grads, nodes, v) {
                        for (di, gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let ad = nodes[a.0].value.data().to_vec();
                let bd = nodes[b.0].value.data().to_vec();
                if let Some(d) = Self::slot(grads, nodes, *a) {
                    for ((di, gi), bi) in d.iter_mut().zip(g).zip(&bd) {
                        *di += gi * bi;
                    }
                }
                if let Some(d) = Self::slot(grads, nodes, *b) {
                    for ((di, gi), ai) in d.iter_mut().zip(g).zip(&ad) {
                        *di += gi * ai;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(d) = Self::slot(grads, nodes, *x) {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi * factor;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(d) = Self::slot(grads, nodes, *x) {
                    for di in d.iter_mut() {
                        *di += g[0];
                    }
                }
            }
        }
    }

    fn take_slot(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<Vec<f64>> {
        if !nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| vec![0.0; nodes[v.0].value.len()]))
    }

    fn store(grads: &mut [Option<Vec<f64>>], v: Var, value: Option<Vec<f64>>) {
        if let Some(value) = value {
            grads[v.0] = Some(value);
        }
    }
}
