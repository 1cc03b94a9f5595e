//! Forward and backward kernels over flat row-major buffers.
//!
//! The tape owns bookkeeping; these functions only do arithmetic. Backward
//! kernels accumulate (`+=`) into their output buffers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub length: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dGeom {
    pub fn out_len(&self) -> usize {
        (self.length + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y[b, o] = x[b, :] . w[o, :] + bias[o]`
pub fn linear_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * fan_out];
    for b in 0..batch {
        let xr = &x[b * fan_in..(b + 1) * fan_in];
        let yr = &mut y[b * fan_out..(b + 1) * fan_out];
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(xr, &w[o * fan_in..(o + 1) * fan_in]) + bias.map_or(0.0, |bv| bv[o]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for b in 0..batch {
            let dxr = &mut dx[b * fan_in..(b + 1) * fan_in];
            for o in 0..fan_out {
                let g = dy[b * fan_out + o];
                if g != 0.0 {
                    axpy(g, &w[o * fan_in..(o + 1) * fan_in], dxr);
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..batch {
            let xr = &x[b * fan_in..(b + 1) * fan_in];
            for o in 0..fan_out {
                let g = dy[b * fan_out + o];
                if g != 0.0 {
                    axpy(g, xr, &mut dw[o * fan_in..(o + 1) * fan_in]);
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..batch {
            for o in 0..fan_out {
                db[o] += dy[b * fan_out + o];
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut y = vec![0.0; g.batch * g.out_channels * oh * ow];
    let pad = g.padding as isize;
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let bias_o = bias.map_or(0.0, |bv| bv[o]);
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias_o;
                    for c in 0..g.in_channels {
                        let xbase = (b * g.in_channels + c) * g.height * g.width;
                        let wbase = (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
                        for ki in 0..g.kernel_h {
                            let r = (i * g.stride + ki) as isize - pad;
                            if r < 0 || r >= g.height as isize {
                                continue;
                            }
                            let xrow = xbase + r as usize * g.width;
                            let wrow = wbase + ki * g.kernel_w;
                            for kj in 0..g.kernel_w {
                                let col = (j * g.stride + kj) as isize - pad;
                                if col < 0 || col >= g.width as isize {
                                    continue;
                                }
                                acc += x[xrow + col as usize] * w[wrow + kj];
                            }
                        }
                    }
                    y[((b * g.out_channels + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    y
}

pub fn conv2d_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    g: &Conv2dGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.padding as isize;
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            for i in 0..oh {
                for j in 0..ow {
                    let gy = dy[((b * g.out_channels + o) * oh + i) * ow + j];
                    if gy == 0.0 {
                        continue;
                    }
                    for c in 0..g.in_channels {
                        let xbase = (b * g.in_channels + c) * g.height * g.width;
                        let wbase = (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
                        for ki in 0..g.kernel_h {
                            let r = (i * g.stride + ki) as isize - pad;
                            if r < 0 || r >= g.height as isize {
                                continue;
                            }
                            let xrow = xbase + r as usize * g.width;
                            let wrow = wbase + ki * g.kernel_w;
                            for kj in 0..g.kernel_w {
                                let col = (j * g.stride + kj) as isize - pad;
                                if col < 0 || col >= g.width as isize {
                                    continue;
                                }
                                let xi = xrow + col as usize;
                                if let Some(dw) = dw.as_deref_mut() {
                                    dw[wrow + kj] += gy * x[xi];
                                }
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xi] += gy * w[wrow + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        let plane = oh * ow;
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                let base = (b * g.out_channels + o) * plane;
                db[o] += dy[base..base + plane].iter().sum::<f64>();
            }
        }
    }
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Conv1dGeom) -> Vec<f64> {
    let ol = g.out_len();
    let pad = g.padding as isize;
    let mut y = vec![0.0; g.batch * g.out_channels * ol];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let bias_o = bias.map_or(0.0, |bv| bv[o]);
            for t in 0..ol {
                let mut acc = bias_o;
                for c in 0..g.in_channels {
                    let xbase = (b * g.in_channels + c) * g.length;
                    let wbase = (o * g.in_channels + c) * g.kernel;
                    for k in 0..g.kernel {
                        let p = (t * g.stride + k) as isize - pad;
                        if p < 0 || p >= g.length as isize {
                            continue;
                        }
                        acc += x[xbase + p as usize] * w[wbase + k];
                    }
                }
                y[(b * g.out_channels + o) * ol + t] = acc;
            }
        }
    }
    y
}

pub fn conv1d_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    g: &Conv1dGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let ol = g.out_len();
    let pad = g.padding as isize;
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            for t in 0..ol {
                let gy = dy[(b * g.out_channels + o) * ol + t];
                if gy == 0.0 {
                    continue;
                }
                for c in 0..g.in_channels {
                    let xbase = (b * g.in_channels + c) * g.length;
                    let wbase = (o * g.in_channels + c) * g.kernel;
                    for k in 0..g.kernel {
                        let p = (t * g.stride + k) as isize - pad;
                        if p < 0 || p >= g.length as isize {
                            continue;
                        }
                        let xi = xbase + p as usize;
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wbase + k] += gy * x[xi];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi] += gy * w[wbase + k];
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                let base = (b * g.out_channels + o) * ol;
                db[o] += dy[base..base + ol].iter().sum::<f64>();
            }
        }
    }
}

/// Max pooling over the trailing `dims` spatial axes. Returns the output and,
/// for every output cell, the flat input index that won.
pub fn maxpool2d_forward(
    x: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = (height - kernel) / stride + 1;
    let ow = (width - kernel) / stride + 1;
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * height * width;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + i * stride * width + j * stride;
                for ki in 0..kernel {
                    for kj in 0..kernel {
                        let idx = base + (i * stride + ki) * width + j * stride + kj;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_idx);
            }
        }
    }
    (y, arg)
}

pub fn maxpool1d_forward(
    x: &[f64],
    planes: usize,
    length: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let ol = (length - kernel) / stride + 1;
    let mut y = Vec::with_capacity(planes * ol);
    let mut arg = Vec::with_capacity(planes * ol);
    for p in 0..planes {
        let base = p * length;
        for t in 0..ol {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = base + t * stride;
            for k in 0..kernel {
                let idx = base + t * stride + k;
                if x[idx] > best {
                    best = x[idx];
                    best_idx = idx;
                }
            }
            y.push(best);
            arg.push(best_idx);
        }
    }
    (y, arg)
}

/// Window `[start, end)` of output cell `i` for adaptive pooling.
pub fn adaptive_window(i: usize, length: usize, output: usize) -> (usize, usize) {
    let start = (i * length) / output;
    let end = ((i + 1) * length).div_ceil(output);
    (start, end)
}

pub fn adaptive_avg_pool1d_forward(x: &[f64], planes: usize, length: usize, output: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(planes * output);
    for p in 0..planes {
        let row = &x[p * length..(p + 1) * length];
        for i in 0..output {
            let (s, e) = adaptive_window(i, length, output);
            y.push(row[s..e].iter().sum::<f64>() / (e - s) as f64);
        }
    }
    y
}

pub fn adaptive_avg_pool1d_backward(dy: &[f64], planes: usize, length: usize, output: usize, dx: &mut [f64]) {
    for p in 0..planes {
        for i in 0..output {
            let (s, e) = adaptive_window(i, length, output);
            let g = dy[p * output + i] / (e - s) as f64;
            for v in &mut dx[p * length + s..p * length + e] {
                *v += g;
            }
        }
    }
}

/// Per-channel statistics layout for `[batch, channels, inner]` tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl ChannelLayout {
    pub fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn for_each_channel_value(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let base = (b * self.channels + c) * self.inner;
            for t in 0..self.inner {
                f(base + t);
            }
        }
    }
}

/// Biased mean and variance per channel.
pub fn channel_moments(x: &[f64], layout: &ChannelLayout) -> (Vec<f64>, Vec<f64>) {
    let n = layout.count() as f64;
    let mut mean = vec![0.0; layout.channels];
    let mut var = vec![0.0; layout.channels];
    for c in 0..layout.channels {
        let mut s = 0.0;
        layout.for_each_channel_value(c, |i| s += x[i]);
        let m = s / n;
        let mut v = 0.0;
        layout.for_each_channel_value(c, |i| v += (x[i] - m) * (x[i] - m));
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

/// Normalizes with the given statistics; returns `(y, xhat)`.
pub fn batchnorm_apply(
    x: &[f64],
    layout: &ChannelLayout,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for c in 0..layout.channels {
        layout.for_each_channel_value(c, |i| {
            let h = (x[i] - mean[c]) * inv_std[c];
            xhat[i] = h;
            y[i] = gamma[c] * h + beta[c];
        });
    }
    (y, xhat)
}

/// Backward for batch norm. With `batch_stats` the mean and variance are
/// functions of `x` (training mode); otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    layout: &ChannelLayout,
    batch_stats: bool,
    dx: Option<&mut [f64]>,
    mut dgamma: Option<&mut [f64]>,
    mut dbeta: Option<&mut [f64]>,
) {
    let n = layout.count() as f64;
    let mut sum_dy = vec![0.0; layout.channels];
    let mut sum_dy_xhat = vec![0.0; layout.channels];
    for c in 0..layout.channels {
        layout.for_each_channel_value(c, |i| {
            sum_dy[c] += dy[i];
            sum_dy_xhat[c] += dy[i] * xhat[i];
        });
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] += sum_dy_xhat[c];
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] += sum_dy[c];
        }
    }
    if let Some(dx) = dx {
        for c in 0..layout.channels {
            let k = gamma[c] * inv_std[c];
            if batch_stats {
                layout.for_each_channel_value(c, |i| {
                    dx[i] += k * (dy[i] - sum_dy[c] / n - xhat[i] * sum_dy_xhat[c] / n);
                });
            } else {
                layout.for_each_channel_value(c, |i| dx[i] += k * dy[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_windows_cover_input() {
        assert_eq!(adaptive_window(0, 7, 1), (0, 7));
        assert_eq!(adaptive_window(0, 5, 2), (0, 3));
        assert_eq!(adaptive_window(1, 5, 2), (2, 5));
    }

    #[test]
    fn conv2d_identity_kernel_copies_input() {
        let g = Conv2dGeom {
            batch: 1,
            in_channels: 1,
            height: 3,
            width: 3,
            out_channels: 1,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
        };
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(conv2d_forward(&x, &[1.0], None, &g), x);
    }

    #[test]
    fn maxpool_picks_max_and_index() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0, 7.0];
        let (y, arg) = maxpool1d_forward(&x, 1, 9, 3, 3);
        assert_eq!(y, vec![5.0, 4.0, 9.0]);
        assert_eq!(arg, vec![1, 5, 6]);
    }
}
