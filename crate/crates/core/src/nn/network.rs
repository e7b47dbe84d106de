use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::{self, BatchNormCache};
use super::spec::{LayerSpec, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable tensors and running statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Conv/FC: `[weight, bias]`; batch norm: `[gamma, beta]`; otherwise empty.
    pub trainable: Vec<Tensor>,
    /// Batch norm running `(mean, variance)`.
    pub running: Option<(Vec<f64>, Vec<f64>)>,
}

/// A network: its spec plus all parameters. Parameter values are kept
/// exactly representable as `f32` so the model file round-trips bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
}

enum Saved {
    None,
    Bn(BatchNormCache),
    Pool(Vec<usize>),
    Skip(Vec<usize>),
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
pub struct ForwardCache {
    mode: Mode,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Tensor>,
    saved: Vec<Saved>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("non-empty")
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl Network {
    /// He-initialised weights, zero biases, unit batch-norm scale.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.output_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (idx, layer) in spec.layers.iter().enumerate() {
            let params = match *layer {
                LayerSpec::Conv3d { in_ch, out_ch, kernel, .. } => {
                    let fan_in = in_ch * kernel.pow(3);
                    let std = (2.0 / fan_in as f64).sqrt();
                    let shape = vec![out_ch, in_ch, kernel, kernel, kernel];
                    let n: usize = shape.iter().product();
                    let w = (0..n).map(|_| round_f32(std * rng.sample::<f64, _>(StandardNormal))).collect();
                    LayerParams { trainable: vec![Tensor::new(shape, w)?, Tensor::zeros(vec![out_ch])], running: None }
                }
                LayerSpec::Fc { input, output } => {
                    let is_head = idx + 1 == spec.layers.len();
                    let std = if is_head { 0.1 } else { 1.0 } * (2.0 / input as f64).sqrt();
                    let w =
                        (0..input * output).map(|_| round_f32(std * rng.sample::<f64, _>(StandardNormal))).collect();
                    LayerParams {
                        trainable: vec![Tensor::new(vec![output, input], w)?, Tensor::zeros(vec![output])],
                        running: None,
                    }
                }
                LayerSpec::BatchNorm { ch } => LayerParams {
                    trainable: vec![Tensor::filled(vec![ch], 1.0), Tensor::zeros(vec![ch])],
                    running: Some((vec![0.0; ch], vec![1.0; ch])),
                },
                _ => LayerParams { trainable: vec![], running: None },
            };
            layers.push(params);
        }
        debug_assert_eq!(shapes.len(), layers.len());
        Ok(Network { spec, layers })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        let template = Network::new(spec.clone(), 0)?;
        if template.layers.len() != layers.len() {
            return Err(Error::shape("parameter list does not match the spec"));
        }
        for (a, b) in template.layers.iter().zip(&layers) {
            let shapes_a: Vec<_> = a.trainable.iter().map(|t| t.shape().to_vec()).collect();
            let shapes_b: Vec<_> = b.trainable.iter().map(|t| t.shape().to_vec()).collect();
            if shapes_a != shapes_b || a.running.is_some() != b.running.is_some() {
                return Err(Error::shape("parameter shapes do not match the spec"));
            }
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_trainable(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.trainable).map(Tensor::len).sum()
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.trainable.iter_mut())
    }

    /// Sets every weight and bias of the final fully connected layer to zero.
    pub fn zero_head(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            for t in &mut last.trainable {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Rounds every stored value to `f32` precision.
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            for t in &mut layer.trainable {
                t.data_mut().iter_mut().for_each(|v| *v = round_f32(*v));
            }
            if let Some((m, v)) = &mut layer.running {
                m.iter_mut().chain(v.iter_mut()).for_each(|x| *x = round_f32(*x));
            }
        }
    }

    /// Runs the network on a batch `N x C x D x H x W`.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<ForwardCache> {
        let expect: Vec<usize> = self.spec.input.to_vec();
        if input.shape().len() != 5 || input.shape()[1..] != expect[..] {
            return Err(Error::shape(format!("network expects N x {:?}, got {:?}", self.spec.input, input.shape())));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut saved = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for (idx, (layer, params)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let x = acts.last().expect("non-empty");
            let (y, s) = match *layer {
                LayerSpec::Conv3d { .. } => {
                    (ops::conv3d_forward(x, &params.trainable[0], params.trainable[1].data())?, Saved::None)
                }
                LayerSpec::Relu => (ops::relu(x), Saved::None),
                LayerSpec::BatchNorm { .. } => {
                    let (gamma, beta) = (params.trainable[0].data(), params.trainable[1].data());
                    match mode {
                        Mode::Train => {
                            let (y, cache) = ops::batchnorm_train(x, gamma, beta)?;
                            (y, Saved::Bn(cache))
                        }
                        Mode::Eval => {
                            let (m, v) = params.running.as_ref().expect("bn has running stats");
                            (ops::batchnorm_eval(x, gamma, beta, m, v)?, Saved::None)
                        }
                    }
                }
                LayerSpec::MaxPool { window } => {
                    let (y, arg) = ops::maxpool_forward(x, window)?;
                    (y, Saved::Pool(arg))
                }
                LayerSpec::AvgPool { window } => (ops::avgpool_forward(x, window)?, Saved::None),
                LayerSpec::Concat { source, pool } => {
                    let (low, arg) = ops::maxpool_forward(&acts[source + 1], pool)?;
                    (ops::concat_skip(&low, x)?, Saved::Skip(arg))
                }
                LayerSpec::Flatten => {
                    let n = x.shape()[0];
                    let rest = x.len() / n;
                    (x.clone().reshape(vec![n, rest])?, Saved::None)
                }
                LayerSpec::Fc { .. } => {
                    (ops::fc_forward(x, &params.trainable[0], params.trainable[1].data())?, Saved::None)
                }
            };
            if !y.all_finite() {
                return Err(Error::NonFinite(format!("output of layer {idx} ({layer:?})")));
            }
            acts.push(y);
            saved.push(s);
        }
        Ok(ForwardCache { mode, acts, saved })
    }

    /// Gradients of `sum(grad_output * output)` with respect to every
    /// trainable tensor (same layout as the parameters) and to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<(Vec<Vec<Tensor>>, Tensor)> {
        let n_layers = self.layers.len();
        let mut grads: Vec<Vec<Tensor>> = self
            .layers
            .iter()
            .map(|l| l.trainable.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
            .collect();
        let mut pending: Vec<Option<Tensor>> = vec![None; n_layers];
        let mut g = grad_output.clone();
        for idx in (0..n_layers).rev() {
            if let Some(extra) = pending[idx].take() {
                g.add_assign(&extra);
            }
            let x = &cache.acts[idx];
            let params = &self.layers[idx];
            g = match (self.spec.layers[idx], &cache.saved[idx]) {
                (LayerSpec::Conv3d { .. }, _) => {
                    let (gx, gw, gb) = ops::conv3d_backward(&g, x, &params.trainable[0])?;
                    grads[idx][0] = gw;
                    grads[idx][1] = Tensor::new(vec![gb.len()], gb)?;
                    gx
                }
                (LayerSpec::Relu, _) => ops::relu_backward(&g, x),
                (LayerSpec::BatchNorm { .. }, Saved::Bn(bn)) => {
                    let (gx, gg, gb) = ops::batchnorm_train_backward(&g, bn, params.trainable[0].data())?;
                    grads[idx][0] = Tensor::new(vec![gg.len()], gg)?;
                    grads[idx][1] = Tensor::new(vec![gb.len()], gb)?;
                    gx
                }
                (LayerSpec::BatchNorm { .. }, _) => {
                    // Eval mode: affine in x with fixed statistics.
                    let (m, v) = params.running.as_ref().expect("bn has running stats");
                    let gamma = params.trainable[0].data();
                    let plane: usize = x.shape()[2..].iter().product();
                    let c = gamma.len();
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for (i, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                        let ch = (i / plane) % c;
                        gg[ch] += gv * (xv - m[ch]) / (v[ch] + ops::BN_EPSILON).sqrt();
                        gb[ch] += gv;
                    }
                    grads[idx][0] = Tensor::new(vec![c], gg)?;
                    grads[idx][1] = Tensor::new(vec![c], gb)?;
                    ops::batchnorm_eval_backward(&g, gamma, v)?
                }
                (LayerSpec::MaxPool { .. }, Saved::Pool(arg)) => ops::maxpool_backward(&g, arg, x.shape())?,
                (LayerSpec::AvgPool { window }, _) => ops::avgpool_backward(&g, window, x.shape())?,
                (LayerSpec::Concat { source, .. }, Saved::Skip(arg)) => {
                    let src_shape = cache.acts[source + 1].shape();
                    let (g_low, g_high) = ops::concat_skip_backward(&g, src_shape[1])?;
                    let g_src = ops::maxpool_backward(&g_low, arg, src_shape)?;
                    match &mut pending[source] {
                        Some(acc) => acc.add_assign(&g_src),
                        slot @ None => *slot = Some(g_src),
                    }
                    g_high
                }
                (LayerSpec::Flatten, _) => g.reshape(x.shape().to_vec())?,
                (LayerSpec::Fc { .. }, _) => {
                    let (gx, gw, gb) = ops::fc_backward(&g, x, &params.trainable[0])?;
                    grads[idx][0] = gw;
                    grads[idx][1] = Tensor::new(vec![gb.len()], gb)?;
                    gx
                }
                (layer, _) => {
                    return Err(Error::shape(format!("missing forward cache for {layer:?}")));
                }
            };
        }
        debug_assert!(cache.mode == Mode::Train || cache.mode == Mode::Eval);
        Ok((grads, g))
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running mean/variance (`running = 0.9 * running + 0.1 * batch`).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (params, saved) in self.layers.iter_mut().zip(&cache.saved) {
            if let (Some((m, v)), Saved::Bn(bn)) = (&mut params.running, saved) {
                let count = bn.x_hat.len() / bn.batch_mean.len();
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for c in 0..m.len() {
                    m[c] = round_f32(ops::BN_MOMENTUM * m[c] + (1.0 - ops::BN_MOMENTUM) * bn.batch_mean[c]);
                    let var = ops::BN_MOMENTUM * v[c] + (1.0 - ops::BN_MOMENTUM) * bn.batch_var[c] * unbias;
                    v[c] = round_f32(var.max(ops::BN_EPSILON));
                }
            }
        }
    }

    /// Eval-mode scalar outputs (network units) for a batch.
    pub fn predict_batch(&self, input: &Tensor) -> Result<Vec<f64>> {
        let cache = self.forward(input, Mode::Eval)?;
        Ok(cache.output().data().to_vec())
    }

    /// Uniform initialisation helper used by tests to randomise BN stats.
    #[doc(hidden)]
    pub fn perturb_running_stats(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if let Some((m, v)) = &mut layer.running {
                for x in m.iter_mut() {
                    *x = round_f32(rng.random_range(-0.5..0.5));
                }
                for x in v.iter_mut() {
                    *x = round_f32(rng.random_range(0.5..2.0));
                }
            }
        }
    }
}
