//! Forward and backward passes for each layer type.
//!
//! Convolutions are 3x3, stride 1, zero padding 1. Pooling is 2x2, stride 2.
//! Per-sample work runs on the rayon pool; anything reduced over the batch
//! is summed in sample order so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{Scalar, Tensor4};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Output columns `[lo, hi)` for which input column `x + kx - 1` exists.
#[inline]
fn valid_cols(kx: usize, w: usize) -> (usize, usize) {
    let lo = usize::from(kx == 0);
    let hi = if kx == 2 { w.saturating_sub(1) } else { w };
    (lo, hi.max(lo))
}

fn check_conv(x: &Tensor4<impl Scalar>, weight_len: usize, bias_len: usize, out_c: usize) -> Result<()> {
    let expect = out_c * x.channels() * TAPS;
    if weight_len != expect || bias_len != out_c {
        return Err(Error::Shape(format!(
            "conv with {} input channels and {out_c} outputs needs {expect} weights and {out_c} biases, got {weight_len} and {bias_len}",
            x.channels()
        )));
    }
    Ok(())
}

/// 3x3 convolution (cross-correlation). `weight` is `[out_c, in_c, 3, 3]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, weight: &[T], bias: &[T], out_c: usize) -> Result<Tensor4<T>> {
    check_conv(x, weight.len(), bias.len(), out_c)?;
    let [n, in_c, h, w] = x.dims();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, out_c, h, w]);
    if hw == 0 || n == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_c * hw)
        .zip(x.data().par_chunks(in_c * hw))
        .for_each(|(out_s, x_s)| {
            for (oc, plane) in out_s.chunks_exact_mut(hw).enumerate() {
                plane.fill(bias[oc]);
                for ic in 0..in_c {
                    let xin = &x_s[ic * hw..(ic + 1) * hw];
                    let k = &weight[(oc * in_c + ic) * TAPS..][..TAPS];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let wv = k[ky * KERNEL + kx];
                            let (lo, hi) = valid_cols(kx, w);
                            for y in 0..h {
                                let iy = y + ky;
                                if iy < 1 || iy > h {
                                    continue;
                                }
                                let irow = (iy - 1) * w;
                                axpy(
                                    wv,
                                    &xin[irow + lo + kx - 1..irow + hi + kx - 1],
                                    &mut plane[y * w + lo..y * w + hi],
                                );
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of a 3x3 convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &[T],
    out_c: usize,
    dout: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    check_conv(x, weight.len(), out_c, out_c)?;
    let [n, in_c, h, w] = x.dims();
    if dout.dims() != [n, out_c, h, w] {
        return Err(Error::Shape(format!(
            "conv gradient {:?} does not match output {:?}",
            dout.dims(),
            [n, out_c, h, w]
        )));
    }
    let hw = h * w;
    let mut dx = Tensor4::zeros(x.dims());
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); out_c];
    if hw == 0 || n == 0 {
        return Ok((dx, dw, db));
    }
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .data_mut()
        .par_chunks_mut(in_c * hw)
        .zip(x.data().par_chunks(in_c * hw))
        .zip(dout.data().par_chunks(out_c * hw))
        .map(|((dx_s, x_s), g_s)| {
            let mut dw_s = vec![T::zero(); weight.len()];
            let mut db_s = vec![T::zero(); out_c];
            for oc in 0..out_c {
                let g = &g_s[oc * hw..(oc + 1) * hw];
                db_s[oc] = g.iter().copied().sum();
                for ic in 0..in_c {
                    let xin = &x_s[ic * hw..(ic + 1) * hw];
                    let dxin = &mut dx_s[ic * hw..(ic + 1) * hw];
                    let base = (oc * in_c + ic) * TAPS;
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let wv = weight[base + ky * KERNEL + kx];
                            let (lo, hi) = valid_cols(kx, w);
                            let mut acc = T::zero();
                            for y in 0..h {
                                let iy = y + ky;
                                if iy < 1 || iy > h {
                                    continue;
                                }
                                let irow = (iy - 1) * w;
                                let grow = &g[y * w + lo..y * w + hi];
                                acc += dot(grow, &xin[irow + lo + kx - 1..irow + hi + kx - 1]);
                                axpy(wv, grow, &mut dxin[irow + lo + kx - 1..irow + hi + kx - 1]);
                            }
                            dw_s[base + ky * KERNEL + kx] = acc;
                        }
                    }
                }
            }
            (dw_s, db_s)
        })
        .collect();
    for (dw_s, db_s) in partials {
        axpy(T::one(), &dw_s, &mut dw);
        axpy(T::one(), &db_s, &mut db);
    }
    Ok((dx, dw, db))
}

/// Per-channel batch statistics from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the normalization set.
    pub var: Vec<f64>,
    /// Size of the normalization set per channel.
    pub count: usize,
}

/// What batch-norm backward needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Training-mode batch norm: normalizes each channel over (batch, H, W).
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor4<T>, BnCache<T>, BatchStats)> {
    let [n, c, h, w] = x.dims();
    check_bn(c, gamma, beta)?;
    let hw = h * w;
    let m = n * hw;
    if m < 2 {
        return Err(Error::Shape(format!(
            "batch norm in training mode needs at least 2 values per channel, got {m}"
        )));
    }
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            s += x.data()[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / m as f64;
        let mut q = 0.0;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            q += x.data()[off..off + hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m as f64;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
    let shift: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let (y, xhat) = bn_apply(x, gamma, beta, &shift, &inv_std);
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            train: true,
        },
        BatchStats { mean, var, count: m },
    ))
}

/// Inference-mode batch norm using running statistics.
pub fn batchnorm_forward_eval<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let c = x.channels();
    check_bn(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("batch norm running statistics".into()));
    }
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|v| T::of(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    let (y, xhat) = bn_apply(x, gamma, beta, running_mean, &inv_std);
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            train: false,
        },
    ))
}

fn check_bn<T>(c: usize, gamma: &[T], beta: &[T]) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batch norm over {c} channels got {} scales and {} shifts",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

fn bn_apply<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T], mean: &[T], inv_std: &[T]) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let mut y = Tensor4::zeros(x.dims());
    let mut xhat = Tensor4::zeros(x.dims());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let src = &x.data()[off..off + hw];
            let xh = &mut xhat.data_mut()[off..off + hw];
            for (d, s) in xh.iter_mut().zip(src) {
                *d = (*s - mean[ch]) * inv_std[ch];
            }
            let yd = &mut y.data_mut()[off..off + hw];
            for (d, s) in yd.iter_mut().zip(xhat.data()[off..off + hw].iter()) {
                *d = gamma[ch] * *s + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Gradients of batch norm: `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = dy.dims();
    if cache.xhat.dims() != dy.dims() {
        return Err(Error::Shape("batch norm gradient shape".into()));
    }
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let g = &dy.data()[off..off + hw];
            dbeta[ch] += g.iter().copied().sum::<T>();
            dgamma[ch] += dot(g, &cache.xhat.data()[off..off + hw]);
        }
    }
    let mut dx = Tensor4::zeros(dy.dims());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let g = &dy.data()[off..off + hw];
            let xh = &cache.xhat.data()[off..off + hw];
            let out = &mut dx.data_mut()[off..off + hw];
            let k = gamma[ch] * cache.inv_std[ch];
            if cache.train {
                // dx = k/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                let km = k / m;
                for ((o, gi), xi) in out.iter_mut().zip(g).zip(xh) {
                    *o = km * (m * *gi - dbeta[ch] - *xi * dgamma[ch]);
                }
            } else {
                for (o, gi) in out.iter_mut().zip(g) {
                    *o = k * *gi;
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// 2x2 max pool, stride 2. Odd trailing rows/columns are dropped.
/// Returns the pooled tensor and, per output value, the flat input index it
/// came from (first occurrence on ties).
pub fn maxpool_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let xd = x.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.data_mut()[o] = xd[best];
                arg[o] = best;
                o += 1;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor4<T>, argmax: &[usize], input_dims: [usize; 4]) -> Result<Tensor4<T>> {
    if dy.data().len() != argmax.len() {
        return Err(Error::Shape("max pool gradient shape".into()));
    }
    let mut dx = Tensor4::zeros(input_dims);
    for (g, &i) in dy.data().iter().zip(argmax) {
        dx.data_mut()[i] += *g;
    }
    Ok(dx)
}

/// Affine layer on `batch` rows: `y = W x + b`, `W` is `[out, in]`.
pub fn fc_forward<T: Scalar>(x: &[T], batch: usize, weight: &[T], bias: &[T]) -> Result<Vec<T>> {
    let out_f = bias.len();
    let in_f = check_fc(x.len(), batch, weight.len(), out_f)?;
    let mut y = vec![T::zero(); batch * out_f];
    for b in 0..batch {
        let xb = &x[b * in_f..(b + 1) * in_f];
        for o in 0..out_f {
            y[b * out_f + o] = bias[o] + dot(&weight[o * in_f..(o + 1) * in_f], xb);
        }
    }
    Ok(y)
}

/// Gradients of the affine layer: `(d_input, d_weight, d_bias)`.
pub fn fc_backward<T: Scalar>(x: &[T], batch: usize, weight: &[T], dy: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if batch == 0 || !dy.len().is_multiple_of(batch) {
        return Err(Error::Shape("fc gradient shape".into()));
    }
    let out_f = dy.len() / batch;
    let in_f = check_fc(x.len(), batch, weight.len(), out_f)?;
    let mut dx = vec![T::zero(); batch * in_f];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); out_f];
    for b in 0..batch {
        let xb = &x[b * in_f..(b + 1) * in_f];
        let dxb = &mut dx[b * in_f..(b + 1) * in_f];
        for o in 0..out_f {
            let g = dy[b * out_f + o];
            db[o] += g;
            axpy(g, xb, &mut dw[o * in_f..(o + 1) * in_f]);
            axpy(g, &weight[o * in_f..(o + 1) * in_f], dxb);
        }
    }
    Ok((dx, dw, db))
}

fn check_fc(x_len: usize, batch: usize, w_len: usize, out_f: usize) -> Result<usize> {
    if batch == 0 || !x_len.is_multiple_of(batch) || out_f == 0 {
        return Err(Error::Shape("fc input shape".into()));
    }
    let in_f = x_len / batch;
    if w_len != in_f * out_f {
        return Err(Error::Shape(format!(
            "fc {in_f} -> {out_f} needs {} weights, got {w_len}",
            in_f * out_f
        )));
    }
    Ok(in_f)
}

pub fn relu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Passes gradient only where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// Mean over the batch of the squared Euclidean error; returns the loss and
/// its gradient with respect to `pred`.
pub fn l2_loss<T: Scalar>(pred: &[T], target: &[T], batch: usize) -> Result<(f64, Vec<T>)> {
    if pred.len() != target.len() || batch == 0 || !pred.len().is_multiple_of(batch) {
        return Err(Error::Shape("loss prediction/target shape".into()));
    }
    let scale = T::of(2.0 / batch as f64);
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok((loss / batch as f64, grad))
}
