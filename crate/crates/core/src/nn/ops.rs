//! Layer kernels with explicit forward and backward passes.
//!
//! Convolutions are valid (unpadded) cross-correlations with stride 1.
//! Every reduction accumulates in `f64`.

use super::Tensor;
use crate::error::{Error, Result};

/// Elementwise `max(x, 0)`.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Passes the gradient where the input was `>= 0`; the subgradient at 0 is 1.
pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Tensor {
    let data = grad_out.data().iter().zip(x.data()).map(|(&g, &v)| if v >= 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn conv_shapes(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<(usize, usize, usize, usize, [usize; 3], [usize; 3])> {
    let (n, c_in, dims) = x.dims5()?;
    let (c_out, wc_in, k) = match *w.shape() {
        [o, i, k0, k1, k2] if k0 == k1 && k1 == k2 => (o, i, k0),
        _ => return Err(Error::shape(format!("bad conv weight shape {:?}", w.shape()))),
    };
    if wc_in != c_in {
        return Err(Error::shape(format!("conv expects {wc_in} input channels, got {c_in}")));
    }
    if b.len() != c_out {
        return Err(Error::shape(format!("conv bias has {} entries, need {c_out}", b.len())));
    }
    if dims.iter().any(|&d| d < k) {
        return Err(Error::shape(format!("kernel {k} larger than input {dims:?}")));
    }
    let out = dims.map(|d| d - k + 1);
    Ok((n, c_in, c_out, k, dims, out))
}

/// Valid 3D cross-correlation plus bias. `w` is `C_out x C_in x K x K x K`.
pub fn conv3d_forward(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    let (n, c_in, c_out, k, [d, h, wd], [od, oh, ow]) = conv_shapes(x, w, b)?;
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;
    let mut out = vec![0.0; n * c_out * out_plane];
    let xs = x.data();
    let ws = w.data();
    for s in 0..n {
        for oc in 0..c_out {
            let dst = &mut out[(s * c_out + oc) * out_plane..][..out_plane];
            dst.fill(b[oc]);
            for ic in 0..c_in {
                let src = &xs[(s * c_in + ic) * in_plane..][..in_plane];
                let wk = &ws[(oc * c_in + ic) * k * k * k..][..k * k * k];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wk[(kz * k + ky) * k + kx];
                            for z in 0..od {
                                for y in 0..oh {
                                    let row_in = &src[((z + kz) * h + y + ky) * wd + kx..][..ow];
                                    let row_out = &mut dst[(z * oh + y) * ow..][..ow];
                                    for (o, &i) in row_out.iter_mut().zip(row_in) {
                                        *o += wv * i;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, od, oh, ow], out)
}

/// Gradients of [`conv3d_forward`] with respect to input, weights and bias.
pub fn conv3d_backward(grad_out: &Tensor, x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let c_out = w.shape()[0];
    let zero_bias = vec![0.0; c_out];
    let (n, c_in, c_out, k, [d, h, wd], [od, oh, ow]) = conv_shapes(x, w, &zero_bias)?;
    if grad_out.shape() != [n, c_out, od, oh, ow] {
        return Err(Error::shape(format!(
            "conv grad has shape {:?}, forward produced {:?}",
            grad_out.shape(),
            [n, c_out, od, oh, ow]
        )));
    }
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;
    let xs = x.data();
    let ws = w.data();
    let gs = grad_out.data();
    let mut gx = vec![0.0; xs.len()];
    let mut gw = vec![0.0; ws.len()];
    let mut gb = vec![0.0; c_out];
    for s in 0..n {
        for oc in 0..c_out {
            let g = &gs[(s * c_out + oc) * out_plane..][..out_plane];
            gb[oc] += g.iter().sum::<f64>();
            for ic in 0..c_in {
                let src = &xs[(s * c_in + ic) * in_plane..][..in_plane];
                let gsrc = &mut gx[(s * c_in + ic) * in_plane..][..in_plane];
                let base = (oc * c_in + ic) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = base + (kz * k + ky) * k + kx;
                            let wv = ws[widx];
                            let mut acc = 0.0;
                            for z in 0..od {
                                for y in 0..oh {
                                    let off = ((z + kz) * h + y + ky) * wd + kx;
                                    let grow = &g[(z * oh + y) * ow..][..ow];
                                    let xrow = &src[off..][..ow];
                                    acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                    let gxrow = &mut gsrc[off..][..ow];
                                    for (dst, &gv) in gxrow.iter_mut().zip(grow) {
                                        *dst += wv * gv;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, Tensor::new(w.shape().to_vec(), gw)?, gb))
}

/// Batch statistics kept from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

fn per_channel(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let (n, c, dims) = match x.shape() {
        [n, c, rest @ ..] => (*n, *c, rest.iter().product::<usize>()),
        _ => return Err(Error::shape(format!("batchnorm input {:?}", x.shape()))),
    };
    if c != channels {
        return Err(Error::shape(format!("batchnorm over {channels} channels got {c}")));
    }
    Ok((n, dims))
}

/// Training-mode batch normalisation using the statistics of `x` itself.
pub fn batchnorm_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, BatchNormCache)> {
    let c = gamma.len();
    let (n, plane) = per_channel(x, c)?;
    let xs = x.data();
    let count = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            sum += xs[(s * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0;
        for s in 0..n {
            sq += xs[(s * c + ch) * plane..][..plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut x_hat = vec![0.0; xs.len()];
    let mut y = vec![0.0; xs.len()];
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            for ((xh, yv), &xv) in x_hat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xs[r]) {
                *xh = (xv - mean[ch]) * inv_std[ch];
                *yv = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        BatchNormCache { x_hat: Tensor::new(x.shape().to_vec(), x_hat)?, inv_std, batch_mean: mean, batch_var: var },
    ))
}

/// Inference-mode batch normalisation with stored running statistics.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor> {
    let c = gamma.len();
    let (n, plane) = per_channel(x, c)?;
    let mut y = x.data().to_vec();
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPSILON).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            for v in &mut y[(s * c + ch) * plane..][..plane] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

/// Backward pass of [`batchnorm_train`]: `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_train_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    gamma: &[f64],
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = gamma.len();
    let (n, plane) = per_channel(grad_out, c)?;
    let gs = grad_out.data();
    let xh = cache.x_hat.data();
    let count = (n * plane) as f64;
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            for (&g, &x) in gs[r.clone()].iter().zip(&xh[r]) {
                g_gamma[ch] += g * x;
                g_beta[ch] += g;
            }
        }
    }
    let mut gx = vec![0.0; gs.len()];
    for s in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / count;
            let r = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            for ((dst, &g), &x) in gx[r.clone()].iter_mut().zip(&gs[r.clone()]).zip(&xh[r]) {
                *dst = k * (count * g - g_beta[ch] - x * g_gamma[ch]);
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), gx)?, g_gamma, g_beta))
}

/// Backward pass of [`batchnorm_eval`] with respect to the input only.
pub fn batchnorm_eval_backward(grad_out: &Tensor, gamma: &[f64], running_var: &[f64]) -> Result<Tensor> {
    let c = gamma.len();
    let (n, plane) = per_channel(grad_out, c)?;
    let mut gx = grad_out.data().to_vec();
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPSILON).sqrt();
            for v in &mut gx[(s * c + ch) * plane..][..plane] {
                *v *= scale;
            }
        }
    }
    Tensor::new(grad_out.shape().to_vec(), gx)
}

fn pool_dims(x: &Tensor, window: usize) -> Result<(usize, usize, [usize; 3], [usize; 3])> {
    let (n, c, dims) = x.dims5()?;
    if window == 0 || dims.iter().any(|&d| d < window) {
        return Err(Error::shape(format!("pool window {window} does not fit {dims:?}")));
    }
    Ok((n, c, dims, dims.map(|d| d / window)))
}

/// Non-overlapping max pooling; trailing voxels that do not fill a window are dropped.
/// Returns the pooled tensor and, per output value, the flat input index it came from.
pub fn maxpool_forward(x: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, [_, h, w], [od, oh, ow]) = pool_dims(x, window)?;
    let (_, _, [d, _, _]) = x.dims5()?;
    let xs = x.data();
    let plane = d * h * w;
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * plane;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = base;
                    for dz in 0..window {
                        for dy in 0..window {
                            for dx in 0..window {
                                let idx = base + ((z * window + dz) * h + y * window + dy) * w + xo * window + dx;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, od, oh, ow], out)?, argmax))
}

pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let data = gx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        data[idx] += g;
    }
    Ok(gx)
}

/// Non-overlapping average pooling.
pub fn avgpool_forward(x: &Tensor, window: usize) -> Result<Tensor> {
    let (n, c, [_, h, w], [od, oh, ow]) = pool_dims(x, window)?;
    let (_, _, [d, _, _]) = x.dims5()?;
    let xs = x.data();
    let plane = d * h * w;
    let norm = 1.0 / (window * window * window) as f64;
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    for nc in 0..n * c {
        let base = nc * plane;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut sum = 0.0;
                    for dz in 0..window {
                        for dy in 0..window {
                            let row = base + ((z * window + dz) * h + y * window + dy) * w + xo * window;
                            sum += xs[row..row + window].iter().sum::<f64>();
                        }
                    }
                    out.push(sum * norm);
                }
            }
        }
    }
    Tensor::new(vec![n, c, od, oh, ow], out)
}

pub fn avgpool_backward(grad_out: &Tensor, window: usize, input_shape: &[usize]) -> Result<Tensor> {
    let (n, c, [od, oh, ow]) = grad_out.dims5()?;
    let (h, w) = (input_shape[3], input_shape[4]);
    let plane: usize = input_shape[2..].iter().product();
    let norm = 1.0 / (window * window * window) as f64;
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let data = gx.data_mut();
    let gs = grad_out.data();
    let mut it = 0;
    for nc in 0..n * c {
        let base = nc * plane;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let g = gs[it] * norm;
                    it += 1;
                    for dz in 0..window {
                        for dy in 0..window {
                            let row = base + ((z * window + dz) * h + y * window + dy) * w + xo * window;
                            for v in &mut data[row..row + window] {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Channel-axis concatenation `[low, high]`.
pub fn concat_skip(low: &Tensor, high: &Tensor) -> Result<Tensor> {
    let (n, cl, dl) = low.dims5()?;
    let (nh, ch, dh) = high.dims5()?;
    if n != nh || dl != dh {
        return Err(Error::shape(format!("cannot concatenate {:?} with {:?}", low.shape(), high.shape())));
    }
    let plane: usize = dl.iter().product();
    let mut out = Vec::with_capacity(low.len() + high.len());
    for s in 0..n {
        out.extend_from_slice(&low.data()[s * cl * plane..(s + 1) * cl * plane]);
        out.extend_from_slice(&high.data()[s * ch * plane..(s + 1) * ch * plane]);
    }
    Tensor::new(vec![n, cl + ch, dl[0], dl[1], dl[2]], out)
}

/// Splits a concatenated gradient back into `(low, high)` parts.
pub fn concat_skip_backward(grad_out: &Tensor, low_channels: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, dims) = grad_out.dims5()?;
    if low_channels >= c {
        return Err(Error::shape("split point beyond channel count"));
    }
    let plane: usize = dims.iter().product();
    let hc = c - low_channels;
    let mut low = Vec::with_capacity(n * low_channels * plane);
    let mut high = Vec::with_capacity(n * hc * plane);
    for s in 0..n {
        let chunk = &grad_out.data()[s * c * plane..(s + 1) * c * plane];
        low.extend_from_slice(&chunk[..low_channels * plane]);
        high.extend_from_slice(&chunk[low_channels * plane..]);
    }
    Ok((
        Tensor::new(vec![n, low_channels, dims[0], dims[1], dims[2]], low)?,
        Tensor::new(vec![n, hc, dims[0], dims[1], dims[2]], high)?,
    ))
}

/// Fully connected layer: `x` is `N x in`, `w` is `out x in`.
pub fn fc_forward(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    let (n, din) = match *x.shape() {
        [n, d] => (n, d),
        _ => return Err(Error::shape(format!("fc input must be 2D, got {:?}", x.shape()))),
    };
    let dout = b.len();
    if w.shape() != [dout, din] {
        return Err(Error::shape(format!("fc weight {:?} vs input {din}", w.shape())));
    }
    let mut out = Vec::with_capacity(n * dout);
    for s in 0..n {
        let xr = &x.data()[s * din..(s + 1) * din];
        for o in 0..dout {
            let wr = &w.data()[o * din..(o + 1) * din];
            out.push(b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>());
        }
    }
    Tensor::new(vec![n, dout], out)
}

pub fn fc_backward(grad_out: &Tensor, x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    if grad_out.shape() != [n, dout] {
        return Err(Error::shape("fc grad shape mismatch"));
    }
    let mut gx = vec![0.0; n * din];
    let mut gw = vec![0.0; dout * din];
    let mut gb = vec![0.0; dout];
    for s in 0..n {
        let xr = &x.data()[s * din..(s + 1) * din];
        let gxr = &mut gx[s * din..(s + 1) * din];
        for o in 0..dout {
            let g = grad_out.data()[s * dout + o];
            gb[o] += g;
            let wr = &w.data()[o * din..(o + 1) * din];
            let gwr = &mut gw[o * din..(o + 1) * din];
            for i in 0..din {
                gwr[i] += g * xr[i];
                gxr[i] += g * wr[i];
            }
        }
    }
    Ok((Tensor::new(vec![n, din], gx)?, Tensor::new(vec![dout, din], gw)?, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Sextuple loop over output position and kernel offset, per channel pair.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64]) -> Vec<f64> {
        let s = x.shape();
        let (n, ci, d, h, wd) = (s[0], s[1], s[2], s[3], s[4]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let (od, oh, ow) = (d - k + 1, h - k + 1, wd - k + 1);
        let mut out = vec![0.0; n * co * od * oh * ow];
        for bn in 0..n {
            for o in 0..co {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = b[o];
                            for i in 0..ci {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let xv =
                                                x.data()[(((bn * ci + i) * d + z + kz) * h + y + ky) * wd + xx + kx];
                                            let wv = w.data()[(((o * ci + i) * k + kz) * k + ky) * k + kx];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                            }
                            out[(((bn * co + o) * od + z) * oh + y) * ow + xx] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        let g = Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&g, &x).data(), &[0.0, 5.0, 5.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(vec![2, 1, 3, 4, 5], &mut rng);
        let w = Tensor::filled(vec![1, 1, 1, 1, 1], 1.0);
        let y = conv3d_forward(&x, &w, &[0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let x = Tensor::filled(vec![1, 1, 5, 5, 5], 1.0);
        let w = Tensor::filled(vec![1, 1, 3, 3, 3], 1.0);
        let y = conv3d_forward(&x, &w, &[0.5]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 27.5));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(vec![1, 2, 4, 4, 4], &mut rng);
        let w = random(vec![3, 2, 2, 2, 2], &mut rng);
        let b = [0.1, -0.2, 0.3];
        let y = conv3d_forward(&x, &w, &b).unwrap();
        for (a, e) in y.data().iter().zip(naive_conv(&x, &w, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_is_shape_error() {
        let x = Tensor::zeros(vec![1, 1, 2, 5, 5]);
        let w = Tensor::zeros(vec![1, 1, 3, 3, 3]);
        assert!(matches!(conv3d_forward(&x, &w, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(vec![1, 2, 4, 4, 4], &mut rng);
        let w = random(vec![2, 2, 3, 3, 3], &mut rng);
        let g = Tensor::zeros(vec![1, 2, 2, 2, 2]);
        let (gx, gw, gb) = conv3d_backward(&g, &x, &w).unwrap();
        assert!(gx.data().iter().chain(gw.data()).chain(&gb).all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_grad_gives_input_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(vec![1, 1, 5, 5, 5], &mut rng);
        let w = random(vec![1, 1, 3, 3, 3], &mut rng);
        let mut g = Tensor::zeros(vec![1, 1, 3, 3, 3]);
        // Output voxel (z, y, x) = (1, 2, 0).
        g.data_mut()[(1 * 3 + 2) * 3] = 1.0;
        let (_, gw, _) = conv3d_backward(&g, &x, &w).unwrap();
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let patch = x.data()[((1 + kz) * 5 + 2 + ky) * 5 + kx];
                    assert_eq!(gw.data()[(kz * 3 + ky) * 3 + kx], patch);
                }
            }
        }
    }

    fn scalar_loss(y: &Tensor, proj: &[f64]) -> f64 {
        y.data().iter().zip(proj).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den.max(1e-300)
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(vec![2, 2, 4, 5, 4], &mut rng);
        let w = random(vec![3, 2, 2, 2, 2], &mut rng);
        let b = vec![0.2, -0.1, 0.05];
        let y = conv3d_forward(&x, &w, &b).unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = Tensor::new(y.shape().to_vec(), proj.clone()).unwrap();
        let (gx, gw, gb) = conv3d_backward(&g, &x, &w).unwrap();
        let h = 1e-5;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);

        let fd_x: Vec<f64> = (0..x.len())
            .map(|i| {
                fd(&|e| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += e;
                    scalar_loss(&conv3d_forward(&xp, &w, &b).unwrap(), &proj)
                })
            })
            .collect();
        let fd_w: Vec<f64> = (0..w.len())
            .map(|i| {
                fd(&|e| {
                    let mut wp = w.clone();
                    wp.data_mut()[i] += e;
                    scalar_loss(&conv3d_forward(&x, &wp, &b).unwrap(), &proj)
                })
            })
            .collect();
        let fd_b: Vec<f64> = (0..b.len())
            .map(|i| {
                fd(&|e| {
                    let mut bp = b.clone();
                    bp[i] += e;
                    scalar_loss(&conv3d_forward(&x, &w, &bp).unwrap(), &proj)
                })
            })
            .collect();
        assert!(rel_err(gx.data(), &fd_x) < 1e-5);
        assert!(rel_err(gw.data(), &fd_w) < 1e-5);
        assert!(rel_err(&gb, &fd_b) < 1e-5);
    }

    #[test]
    fn batchnorm_train_normalises_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = random(vec![3, 2, 3, 3, 3], &mut rng);
        for v in x.data_mut() {
            *v = *v * 4.0 + 10.0;
        }
        let (y, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let plane = 27;
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.data()[(s * 2 + ch) * plane..][..plane].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            // Epsilon in the denominator shrinks the variance slightly.
            assert!((var - 1.0).abs() < 1e-5 * 4.0);
        }
    }

    #[test]
    fn batchnorm_constant_input_gives_zero() {
        let x = Tensor::filled(vec![2, 3, 2, 2, 2], 4.2);
        let (y, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(vec![2, 3, 2, 3, 2], &mut rng);
        let gamma = vec![1.3, 0.7, -0.4];
        let beta = vec![0.1, 0.2, -0.3];
        let (y, cache) = batchnorm_train(&x, &gamma, &beta).unwrap();
        let proj: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = Tensor::new(y.shape().to_vec(), proj.clone()).unwrap();
        let (gx, gg, gbeta) = batchnorm_train_backward(&g, &cache, &gamma).unwrap();
        let h = 1e-5;
        let loss =
            |x: &Tensor, gamma: &[f64], beta: &[f64]| scalar_loss(&batchnorm_train(x, gamma, beta).unwrap().0, &proj);
        let fd_x: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (loss(&p, &gamma, &beta) - loss(&m, &gamma, &beta)) / (2.0 * h)
            })
            .collect();
        let fd_g: Vec<f64> = (0..3)
            .map(|i| {
                let mut p = gamma.clone();
                p[i] += h;
                let mut m = gamma.clone();
                m[i] -= h;
                (loss(&x, &p, &beta) - loss(&x, &m, &beta)) / (2.0 * h)
            })
            .collect();
        let fd_b: Vec<f64> = (0..3)
            .map(|i| {
                let mut p = beta.clone();
                p[i] += h;
                let mut m = beta.clone();
                m[i] -= h;
                (loss(&x, &gamma, &p) - loss(&x, &gamma, &m)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(gx.data(), &fd_x) < 1e-5);
        assert!(rel_err(&gg, &fd_g) < 1e-5);
        assert!(rel_err(&gbeta, &fd_b) < 1e-5);
    }

    #[test]
    fn concat_shapes_and_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let low = random(vec![1, 4, 8, 8, 8], &mut rng);
        let high = random(vec![1, 8, 8, 8, 8], &mut rng);
        let cat = concat_skip(&low, &high).unwrap();
        assert_eq!(cat.shape(), &[1, 12, 8, 8, 8]);
        let (a, b) = concat_skip_backward(&cat, 4).unwrap();
        assert_eq!(a, low);
        assert_eq!(b, high);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let low = Tensor::zeros(vec![1, 2, 4, 4, 4]);
        let high = Tensor::zeros(vec![1, 2, 4, 4, 3]);
        assert!(concat_skip(&low, &high).is_err());
    }

    #[test]
    fn pools_route_gradients() {
        let x = Tensor::new(vec![1, 1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let (y, arg) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[7.0]);
        let g = maxpool_backward(&Tensor::filled(vec![1, 1, 1, 1, 1], 2.0), &arg, x.shape()).unwrap();
        assert_eq!(g.data()[7], 2.0);
        assert_eq!(g.data().iter().sum::<f64>(), 2.0);
        let a = avgpool_forward(&x, 2).unwrap();
        assert_eq!(a.data(), &[3.5]);
        let ga = avgpool_backward(&Tensor::filled(vec![1, 1, 1, 1, 1], 8.0), 2, x.shape()).unwrap();
        assert!(ga.data().iter().all(|&v| v == 1.0));
    }
}
