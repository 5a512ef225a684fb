//! Forward and backward kernels for the fixed layer set.
//!
//! Activations are `(batch, channels, length)` or `(batch, features)`.
//! Convolution is cross-correlation (no kernel flip). Every backward returns
//! the exact gradient of its forward. Batch-parallel loops write disjoint
//! output rows, and weight gradients are reduced per output unit in a fixed
//! order, so results do not depend on the thread count.

use super::Tensor;
use crate::par;
use crate::{Error, Result};

/// Output length of a 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("conv stride must be at least 1".into()));
    }
    if len + 2 * padding < kernel {
        return Err(Error::Shape(format!(
            "conv input length {len} (+2x{padding} padding) shorter than kernel {kernel}"
        )));
    }
    Ok((len + 2 * padding - kernel) / stride + 1)
}

/// Output positions `t` for which `t*stride + k - padding` lies inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    // t*stride + k - padding <= len - 1
    let hi = if len + padding > k {
        ((len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    input.expect_rank(3, "conv1d input")?;
    weight.expect_rank(3, "conv1d weight")?;
    let (b, ci, l) = (input.dim(0), input.dim(1), input.dim(2));
    let (co, wci, k) = (weight.dim(0), weight.dim(1), weight.dim(2));
    if wci != ci {
        return Err(Error::Shape(format!(
            "conv1d weight expects {wci} input channels, input has {ci}"
        )));
    }
    Ok((b, ci, l, co, k))
}

pub fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, ci, l, co, k) = conv_dims(input, weight)?;
    let lo = conv_out_len(l, k, stride, padding)?;
    if let Some(bias) = bias {
        if bias.len() != co {
            return Err(Error::Shape("conv1d bias length".into()));
        }
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; b * co * lo];
    par::for_each_chunk_mut(&mut out, co * lo, |bi, yb| {
        let xb = &x[bi * ci * l..(bi + 1) * ci * l];
        for o in 0..co {
            let y = &mut yb[o * lo..(o + 1) * lo];
            if let Some(bias) = bias {
                y.iter_mut().for_each(|v| *v = bias[o]);
            }
            for i in 0..ci {
                let xr = &xb[i * l..(i + 1) * l];
                let wr = &w[(o * ci + i) * k..(o * ci + i + 1) * k];
                for (kk, &wv) in wr.iter().enumerate() {
                    let (t0, t1) = valid_range(l, lo, kk, stride, padding);
                    if t0 >= t1 {
                        continue;
                    }
                    let base = t0 * stride + kk - padding;
                    if stride == 1 {
                        let xs = &xr[base..base + (t1 - t0)];
                        for (yv, xv) in y[t0..t1].iter_mut().zip(xs) {
                            *yv += wv * xv;
                        }
                    } else {
                        for (j, yv) in y[t0..t1].iter_mut().enumerate() {
                            *yv += wv * xr[base + j * stride];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[b, co, lo], out)
}

/// Gradients of [`conv1d_forward`]: `(d_input, d_weight, d_bias)`.
pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (b, ci, l, co, k) = conv_dims(input, weight)?;
    let lo = conv_out_len(l, k, stride, padding)?;
    grad_out.expect_shape(&[b, co, lo], "conv1d grad_out")?;
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let mut dx = vec![0.0; b * ci * l];
    par::for_each_chunk_mut(&mut dx, ci * l, |bi, dxb| {
        let gb = &g[bi * co * lo..(bi + 1) * co * lo];
        for o in 0..co {
            let gr = &gb[o * lo..(o + 1) * lo];
            for i in 0..ci {
                let dxr = &mut dxb[i * l..(i + 1) * l];
                let wr = &w[(o * ci + i) * k..(o * ci + i + 1) * k];
                for (kk, &wv) in wr.iter().enumerate() {
                    let (t0, t1) = valid_range(l, lo, kk, stride, padding);
                    if t0 >= t1 {
                        continue;
                    }
                    let base = t0 * stride + kk - padding;
                    if stride == 1 {
                        for (dv, gv) in dxr[base..base + (t1 - t0)].iter_mut().zip(&gr[t0..t1]) {
                            *dv += wv * gv;
                        }
                    } else {
                        for (j, gv) in gr[t0..t1].iter().enumerate() {
                            dxr[base + j * stride] += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; co * ci * k];
    par::for_each_chunk_mut(&mut dw, ci * k, |o, dwo| {
        for bi in 0..b {
            let gr = &g[(bi * co + o) * lo..(bi * co + o + 1) * lo];
            for i in 0..ci {
                let xr = &x[(bi * ci + i) * l..(bi * ci + i + 1) * l];
                for kk in 0..k {
                    let (t0, t1) = valid_range(l, lo, kk, stride, padding);
                    if t0 >= t1 {
                        continue;
                    }
                    let base = t0 * stride + kk - padding;
                    let acc: f64 = if stride == 1 {
                        gr[t0..t1]
                            .iter()
                            .zip(&xr[base..base + (t1 - t0)])
                            .map(|(a, b)| a * b)
                            .sum()
                    } else {
                        gr[t0..t1]
                            .iter()
                            .enumerate()
                            .map(|(j, a)| a * xr[base + j * stride])
                            .sum()
                    };
                    dwo[i * k + kk] += acc;
                }
            }
        }
    });

    let mut db = vec![0.0; co];
    for bi in 0..b {
        for (o, d) in db.iter_mut().enumerate() {
            *d += g[(bi * co + o) * lo..(bi * co + o + 1) * lo].iter().sum::<f64>();
        }
    }

    Ok((
        Tensor::new(&[b, ci, l], dx)?,
        Tensor::new(&[co, ci, k], dw)?,
        db,
    ))
}

fn linear_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "linear input")?;
    weight.expect_rank(2, "linear weight")?;
    let (b, n_in) = (input.dim(0), input.dim(1));
    let (n_out, w_in) = (weight.dim(0), weight.dim(1));
    if w_in != n_in {
        return Err(Error::Shape(format!(
            "linear weight expects {w_in} inputs, got {n_in}"
        )));
    }
    Ok((b, n_in, n_out))
}

/// `y = x W^T + b` with `W` shaped `(out, in)`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (b, n_in, n_out) = linear_dims(input, weight)?;
    if let Some(bias) = bias {
        if bias.len() != n_out {
            return Err(Error::Shape("linear bias length".into()));
        }
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; b * n_out];
    par::for_each_chunk_mut(&mut out, n_out, |bi, yb| {
        let xr = &x[bi * n_in..(bi + 1) * n_in];
        for (o, y) in yb.iter_mut().enumerate() {
            let wr = &w[o * n_in..(o + 1) * n_in];
            let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
            *y = dot + bias.map_or(0.0, |bb| bb[o]);
        }
    });
    Tensor::new(&[b, n_out], out)
}

/// Gradients of [`linear_forward`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (b, n_in, n_out) = linear_dims(input, weight)?;
    grad_out.expect_shape(&[b, n_out], "linear grad_out")?;
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let mut dx = vec![0.0; b * n_in];
    par::for_each_chunk_mut(&mut dx, n_in, |bi, dxr| {
        for o in 0..n_out {
            let gv = g[bi * n_out + o];
            if gv == 0.0 {
                continue;
            }
            for (d, wv) in dxr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += gv * wv;
            }
        }
    });

    let mut dw = vec![0.0; n_out * n_in];
    par::for_each_chunk_mut(&mut dw, n_in, |o, dwr| {
        for bi in 0..b {
            let gv = g[bi * n_out + o];
            if gv == 0.0 {
                continue;
            }
            for (d, xv) in dwr.iter_mut().zip(&x[bi * n_in..(bi + 1) * n_in]) {
                *d += gv * xv;
            }
        }
    });

    let mut db = vec![0.0; n_out];
    for bi in 0..b {
        for (o, d) in db.iter_mut().enumerate() {
            *d += g[bi * n_out + o];
        }
    }
    Ok((
        Tensor::new(&[b, n_in], dx)?,
        Tensor::new(&[n_out, n_in], dw)?,
        db,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Gradient of ReLU given its input (or, equivalently, its output).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(x.shape(), "relu grad_out")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Gradient of the sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(y.shape(), "sigmoid grad_out")?;
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(y.shape(), data)
}

fn bcl(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    x.expect_rank(3, what)?;
    Ok((x.dim(0), x.dim(1), x.dim(2)))
}

/// Mean over the length axis: `(B, C, L) -> (B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, l) = bcl(x, "global_avg_pool")?;
    if l == 0 {
        return Err(Error::Shape("global_avg_pool over empty length".into()));
    }
    let data = x
        .data()
        .chunks_exact(l)
        .map(|row| row.iter().sum::<f64>() / l as f64)
        .collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, len: usize) -> Result<Tensor> {
    grad_out.expect_rank(2, "global_avg_pool grad_out")?;
    let (b, c) = (grad_out.dim(0), grad_out.dim(1));
    let mut data = Vec::with_capacity(b * c * len);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / len as f64, len));
    }
    Tensor::new(&[b, c, len], data)
}

/// Max over the length axis with argmax indices (first maximum wins).
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, l) = bcl(x, "global_max_pool")?;
    if l == 0 {
        return Err(Error::Shape("global_max_pool over empty length".into()));
    }
    let mut idx = Vec::with_capacity(b * c);
    let mut out = Vec::with_capacity(b * c);
    for row in x.data().chunks_exact(l) {
        let (i, v) = argmax(row);
        idx.push(i);
        out.push(v);
    }
    Ok((Tensor::new(&[b, c], out)?, idx))
}

pub fn global_max_pool_backward(grad_out: &Tensor, idx: &[usize], len: usize) -> Result<Tensor> {
    grad_out.expect_rank(2, "global_max_pool grad_out")?;
    let (b, c) = (grad_out.dim(0), grad_out.dim(1));
    let mut data = vec![0.0; b * c * len];
    for (r, (&g, &i)) in grad_out.data().iter().zip(idx).enumerate() {
        data[r * len + i] = g;
    }
    Tensor::new(&[b, c, len], data)
}

fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Non-overlapping max pooling with window = stride = `width`; a trailing
/// partial window is dropped.
pub fn max_pool(x: &Tensor, width: usize) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, l) = bcl(x, "max_pool")?;
    if width == 0 || l < width {
        return Err(Error::Shape(format!(
            "max_pool width {width} does not fit length {l}"
        )));
    }
    let lo = l / width;
    let mut out = Vec::with_capacity(b * c * lo);
    let mut idx = Vec::with_capacity(b * c * lo);
    for row in x.data().chunks_exact(l) {
        for j in 0..lo {
            let (i, v) = argmax(&row[j * width..(j + 1) * width]);
            out.push(v);
            idx.push(j * width + i);
        }
    }
    Ok((Tensor::new(&[b, c, lo], out)?, idx))
}

pub fn max_pool_backward(grad_out: &Tensor, idx: &[usize], len: usize) -> Result<Tensor> {
    let (b, c, lo) = bcl(grad_out, "max_pool grad_out")?;
    let mut data = vec![0.0; b * c * len];
    for r in 0..b * c {
        for j in 0..lo {
            data[r * len + idx[r * lo + j]] += grad_out.data()[r * lo + j];
        }
    }
    Tensor::new(&[b, c, len], data)
}

/// Saved state of a training-mode batch norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Training-mode batch norm over `(B, L)` per channel, biased variance.
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let (b, c, l) = bcl(x, "batchnorm input")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape("batchnorm affine length".into()));
    }
    let n = (b * l) as f64;
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            mean[ch] += d[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for bi in 0..b {
        for ch in 0..c {
            let m = mean[ch];
            var[ch] += d[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; d.len()];
    let mut y = vec![0.0; d.len()];
    for bi in 0..b {
        for ch in 0..c {
            let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
            for ((xh, yv), &v) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&d[r]) {
                *xh = (v - mean[ch]) * inv_std[ch];
                *yv = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    Ok((
        Tensor::new(&[b, c, l], y)?,
        BatchNormCache {
            normalized: Tensor::new(&[b, c, l], xhat)?,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Inference-mode batch norm using running statistics.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (b, c, l) = bcl(x, "batchnorm input")?;
    if gamma.len() != c || running_mean.len() != c {
        return Err(Error::Shape("batchnorm channel count".into()));
    }
    let mut y = x.data().to_vec();
    for bi in 0..b {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            y[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    Tensor::new(&[b, c, l], y)
}

/// Gradients of [`batchnorm_train`]: `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let xhat = &cache.normalized;
    grad_out.expect_shape(xhat.shape(), "batchnorm grad_out")?;
    let (b, c, l) = (xhat.dim(0), xhat.dim(1), xhat.dim(2));
    let n = (b * l) as f64;
    let g = grad_out.data();
    let xh = xhat.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
            for (&gv, &xv) in g[r.clone()].iter().zip(&xh[r]) {
                dbeta[ch] += gv;
                dgamma[ch] += gv * xv;
            }
        }
    }
    // dx = gamma * inv_std / n * (n*g - sum(g) - xhat * sum(g*xhat))
    let mut dx = vec![0.0; g.len()];
    for bi in 0..b {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
            for ((d, &gv), &xv) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                *d = k * (n * gv - dbeta[ch] - xv * dgamma[ch]);
            }
        }
    }
    Ok((Tensor::new(&[b, c, l], dx)?, dgamma, dbeta))
}

/// `y[b, c, :] = x[b, c, :] * scale[b, c]`.
pub fn channel_scale(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let (b, c, l) = bcl(x, "channel_scale input")?;
    scale.expect_shape(&[b, c], "channel_scale weights")?;
    let mut y = x.data().to_vec();
    for (row, &s) in y.chunks_exact_mut(l).zip(scale.data()) {
        row.iter_mut().for_each(|v| *v *= s);
    }
    Tensor::new(&[b, c, l], y)
}

/// Gradients of [`channel_scale`]: `(d_input, d_scale)`.
pub fn channel_scale_backward(
    x: &Tensor,
    scale: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, c, l) = bcl(x, "channel_scale input")?;
    grad_out.expect_shape(x.shape(), "channel_scale grad_out")?;
    let mut dx = grad_out.data().to_vec();
    let mut ds = vec![0.0; b * c];
    for (r, ((drow, xrow), &s)) in dx
        .chunks_exact_mut(l)
        .zip(x.data().chunks_exact(l))
        .zip(scale.data())
        .enumerate()
    {
        ds[r] = drow.iter().zip(xrow).map(|(g, v)| g * v).sum();
        drow.iter_mut().for_each(|g| *g *= s);
    }
    Ok((Tensor::new(&[b, c, l], dx)?, Tensor::new(&[b, c], ds)?))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.expect_shape(a.shape(), "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// Concatenates `(B, C_i, L)` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let (b, _, l) = bcl(first, "concat input")?;
    let mut total = 0;
    for p in parts {
        let (pb, pc, pl) = bcl(p, "concat input")?;
        if pb != b || pl != l {
            return Err(Error::Shape(format!(
                "concat: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        total += pc;
    }
    let mut data = Vec::with_capacity(b * total * l);
    for bi in 0..b {
        for p in parts {
            let pc = p.dim(1);
            data.extend_from_slice(&p.data()[bi * pc * l..(bi + 1) * pc * l]);
        }
    }
    Tensor::new(&[b, total, l], data)
}

/// Inverse of [`concat_channels`]: splits by the given channel counts.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (b, c, l) = bcl(x, "split input")?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::Shape("split sizes do not cover channels".into()));
    }
    let mut parts: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(b * s * l)).collect();
    for bi in 0..b {
        let mut off = 0;
        for (p, &s) in parts.iter_mut().zip(sizes) {
            let start = (bi * c + off) * l;
            p.extend_from_slice(&x.data()[start..start + s * l]);
            off += s;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new(&[b, s, l], d))
        .collect()
}

/// Mean cross-entropy of softmax(logits) against integer labels, with its
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank(2, "logits")?;
    let (b, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * k];
    for (bi, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        let (imax, m) = argmax(row);
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != imax)
            .map(|(_, &v)| (v - m).exp())
            .sum();
        let lse = m + rest.ln_1p();
        loss += lse - row[label];
        let g = &mut grad[bi * k..(bi + 1) * k];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp() / b as f64;
        }
        g[label] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, Tensor::new(&[b, k], grad)?))
}

/// Row-wise softmax of `(B, K)` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(2, "logits")?;
    let k = logits.dim(1);
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    Tensor::new(logits.shape(), out)
}
