//! Minimal CPU layer stack with hand-written backward passes.
//!
//! Activations are `f64` throughout. A forward pass returns a [`Tape`] holding
//! whatever each layer needs to differentiate itself; the same tape feeds
//! [`Network::backward`].

use ndarray::{s, Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::ParameterSet;
use crate::error::{Error, Result};
use crate::optim::GradientSet;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Normalise with batch statistics.
    Train,
    /// Normalise with the stored running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: (usize, usize),
    },
    BatchNorm2d {
        name: String,
        channels: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: (usize, usize),
        padding: usize,
    },
    Flatten,
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

/// Spatial output length of a zero-padded "same" convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (len + 2 * pad - kernel) / stride + 1
}

pub fn pool_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding).checked_sub(kernel).map(|d| d / stride + 1)
}

impl Layer {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Error::config(format!("{what}: layer {self:?} cannot take input {input:?}"));
        match self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(bad("channel mismatch"));
                }
                if kernel % 2 == 0 {
                    return Err(bad("same padding needs an odd kernel"));
                }
                Ok(vec![
                    *out_channels,
                    conv_out_len(input[1], *kernel, stride.0),
                    conv_out_len(input[2], *kernel, stride.1),
                ])
            }
            Layer::BatchNorm2d { channels, .. } => {
                if input.len() != 3 || input[0] != *channels {
                    return Err(bad("channel mismatch"));
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d {
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 {
                    return Err(bad("pooling needs [C,H,W]"));
                }
                let h = pool_out_len(input[1], *kernel, stride.0, *padding).ok_or_else(|| bad("input too small"))?;
                let w = pool_out_len(input[2], *kernel, stride.1, *padding).ok_or_else(|| bad("input too small"))?;
                if h == 0 || w == 0 {
                    return Err(bad("empty output"));
                }
                Ok(vec![input[0], h, w])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => {
                if input.len() != 1 || input[0] != *in_features {
                    return Err(bad("feature mismatch"));
                }
                Ok(vec![*out_features])
            }
        }
    }

    /// Names, shapes and trainable flags of the entries this layer owns.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        match self {
            Layer::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (format!("{name}.weight"), vec![*out_channels, *in_channels, *kernel, *kernel], true),
                (format!("{name}.bias"), vec![*out_channels], true),
            ],
            Layer::BatchNorm2d { name, channels } => vec![
                (format!("{name}.gamma"), vec![*channels], true),
                (format!("{name}.beta"), vec![*channels], true),
                (format!("{name}.running_mean"), vec![*channels], false),
                (format!("{name}.running_var"), vec![*channels], false),
            ],
            Layer::Linear {
                name,
                in_features,
                out_features,
            } => vec![
                (format!("{name}.weight"), vec![*out_features, *in_features], true),
                (format!("{name}.bias"), vec![*out_features], true),
            ],
            Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => Vec::new(),
        }
    }

    /// Adds this layer's entries to `params`: Glorot-uniform weights, zero
    /// biases, unit batch-norm scale and variance.
    fn init_params<R: Rng>(&self, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        for (name, shape, trainable) in self.param_layout() {
            let value = if name.ends_with(".weight") {
                let (fan_in, fan_out) = match self {
                    Layer::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        ..
                    } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
                    _ => (shape[1], shape[0]),
                };
                glorot(&shape, fan_in, fan_out, rng)
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                ArrayD::ones(shape)
            } else {
                ArrayD::zeros(shape)
            };
            params.insert(name, value, trainable)?;
        }
        Ok(())
    }
}

fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> ArrayD<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    ArrayD::from_shape_vec(shape.to_vec(), values).expect("shape matches length")
}

enum Cache {
    Conv {
        cols: Array2<f64>,
        input_dim: (usize, usize, usize, usize),
        out_hw: (usize, usize),
    },
    BatchNorm {
        xhat: Array4<f64>,
        inv_std: Array1<f64>,
    },
    Relu {
        output: ArrayD<f64>,
    },
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Linear {
        input: Array2<f64>,
    },
}

/// Batch statistics observed by a train-mode batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub layer: String,
    pub mean: Array1<f64>,
    /// Unbiased variance, as used for the running estimate.
    pub var: Array1<f64>,
}

/// Per-layer caches recorded by one forward pass.
pub struct Tape {
    caches: Vec<Cache>,
    mode: Mode,
    pub batch_stats: Vec<BatchStats>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("layers", &self.caches.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Ordered stack of layers with statically checked per-sample shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self { layers, input_shape })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
            .expect("validated at construction")
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        for layer in &self.layers {
            layer.init_params(&mut params, rng)?;
        }
        Ok(params)
    }

    /// Checks that `params` holds exactly the entries this network creates.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let layout: Vec<_> = self.layers.iter().flat_map(|l| l.param_layout()).collect();
        let matches = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.iter())
                .all(|((name, shape, _), (pn, p))| name == pn && p.value.shape() == &shape[..]);
        if !matches {
            return Err(Error::config("parameter set does not match the network layout"));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParameterSet, input: ArrayD<f64>, mode: Mode) -> Result<(ArrayD<f64>, Tape)> {
        if input.ndim() == 0 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::config(format!(
                "input shape {:?} does not match network input [batch, {:?}]",
                input.shape(),
                self.input_shape
            )));
        }
        if input.shape()[0] == 0 {
            return Err(Error::rejected("empty batch"));
        }
        let mut tape = Tape {
            caches: Vec::with_capacity(self.layers.len()),
            mode,
            batch_stats: Vec::new(),
        };
        let mut x = input;
        for layer in &self.layers {
            x = forward_layer(layer, params, x, mode, &mut tape)?;
        }
        Ok((x, tape))
    }

    /// Back-propagates `grad_out` through the recorded tape.
    ///
    /// Returns gradients for every trainable entry of `params` (empty when
    /// `param_grads` is false) together with the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &ParameterSet,
        tape: Tape,
        grad_out: ArrayD<f64>,
        param_grads: bool,
    ) -> Result<(GradientSet, ArrayD<f64>)> {
        let mut grads: Vec<(String, ArrayD<f64>)> = Vec::new();
        let mut g = grad_out;
        let mode = tape.mode;
        for (layer, cache) in self.layers.iter().zip(tape.caches).rev() {
            g = backward_layer(layer, params, cache, g, mode, param_grads.then_some(&mut grads))?;
        }
        let mut set = GradientSet::new();
        if param_grads {
            // Backward visits layers last-to-first; restore parameter order.
            let mut lookup: std::collections::HashMap<String, ArrayD<f64>> = grads.into_iter().collect();
            for name in params.trainable_names() {
                let grad = lookup
                    .remove(name)
                    .ok_or_else(|| Error::config(format!("no gradient produced for {name:?}")))?;
                set.insert(name, grad);
            }
        }
        Ok((set, g))
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&self, params: &mut ParameterSet, stats: &[BatchStats]) -> Result<()> {
        for st in stats {
            let rm = params.value_mut(&format!("{}.running_mean", st.layer))?;
            rm.zip_mut_with(&st.mean.view().into_dyn(), |r, &m| {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m
            });
            let rv = params.value_mut(&format!("{}.running_var", st.layer))?;
            rv.zip_mut_with(&st.var.view().into_dyn(), |r, &v| {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v
            });
        }
        Ok(())
    }
}

fn to4(x: ArrayD<f64>) -> Result<Array4<f64>> {
    x.into_dimensionality::<Ix4>()
        .map_err(|e| Error::config(format!("expected 4-d activation: {e}")))
}

fn to2(x: ArrayD<f64>) -> Result<Array2<f64>> {
    x.into_dimensionality::<Ix2>()
        .map_err(|e| Error::config(format!("expected 2-d activation: {e}")))
}

fn param4(params: &ParameterSet, name: &str) -> Result<Array4<f64>> {
    to4(params.value(name)?.clone())
}

fn param2(params: &ParameterSet, name: &str) -> Result<Array2<f64>> {
    to2(params.value(name)?.clone())
}

fn param1(params: &ParameterSet, name: &str) -> Result<Array1<f64>> {
    params
        .value(name)?
        .clone()
        .into_dimensionality()
        .map_err(|e| Error::config(format!("{name}: {e}")))
}

fn forward_layer(layer: &Layer, params: &ParameterSet, x: ArrayD<f64>, mode: Mode, tape: &mut Tape) -> Result<ArrayD<f64>> {
    match layer {
        Layer::Conv2d {
            name,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            let x = to4(x)?.as_standard_layout().into_owned();
            let (b, c, h, w) = x.dim();
            let (ho, wo) = (conv_out_len(h, *kernel, stride.0), conv_out_len(w, *kernel, stride.1));
            let cols = im2col(&x, *kernel, *stride, (ho, wo));
            let weight = param4(params, &format!("{name}.weight"))?;
            let w2 = weight
                .into_shape_with_order((*out_channels, c * kernel * kernel))
                .map_err(|e| Error::config(e.to_string()))?;
            let bias = param1(params, &format!("{name}.bias"))?;
            let mut res = w2.dot(&cols);
            for (mut row, &bv) in res.rows_mut().into_iter().zip(bias.iter()) {
                row += bv;
            }
            let out = res
                .into_shape_with_order((*out_channels, b, ho * wo))
                .map_err(|e| Error::config(e.to_string()))?
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((b, *out_channels, ho, wo))
                .map_err(|e| Error::config(e.to_string()))?;
            tape.caches.push(Cache::Conv {
                cols,
                input_dim: (b, c, h, w),
                out_hw: (ho, wo),
            });
            Ok(out.into_dyn())
        }
        Layer::BatchNorm2d { name, channels } => {
            let x = to4(x)?;
            let gamma = param1(params, &format!("{name}.gamma"))?;
            let beta = param1(params, &format!("{name}.beta"))?;
            let (b, _, h, w) = x.dim();
            let n = (b * h * w) as f64;
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = x.mean_axis(Axis(3)).unwrap().mean_axis(Axis(2)).unwrap().mean_axis(Axis(0)).unwrap();
                    let mut var = Array1::<f64>::zeros(*channels);
                    for (ch, v) in var.iter_mut().enumerate() {
                        let m = mean[ch];
                        *v = x.slice(s![.., ch, .., ..]).iter().map(|&e| (e - m) * (e - m)).sum::<f64>() / n;
                    }
                    let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                    tape.batch_stats.push(BatchStats {
                        layer: name.clone(),
                        mean: mean.clone(),
                        var: unbiased,
                    });
                    (mean, var)
                }
                Mode::Eval => (
                    param1(params, &format!("{name}.running_mean"))?,
                    param1(params, &format!("{name}.running_var"))?,
                ),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let mut xhat = x;
            for ch in 0..*channels {
                let (m, is) = (mean[ch], inv_std[ch]);
                xhat.slice_mut(s![.., ch, .., ..]).mapv_inplace(|e| (e - m) * is);
            }
            let mut y = xhat.clone();
            for ch in 0..*channels {
                let (g, bt) = (gamma[ch], beta[ch]);
                y.slice_mut(s![.., ch, .., ..]).mapv_inplace(|e| g * e + bt);
            }
            tape.caches.push(Cache::BatchNorm { xhat, inv_std });
            Ok(y.into_dyn())
        }
        Layer::Relu => {
            let y = x.mapv_into(|v| v.max(0.0));
            tape.caches.push(Cache::Relu { output: y.clone() });
            Ok(y)
        }
        Layer::MaxPool2d {
            kernel,
            stride,
            padding,
        } => {
            let x = to4(x)?.as_standard_layout().into_owned();
            let (b, c, h, w) = x.dim();
            let ho = pool_out_len(h, *kernel, stride.0, *padding).unwrap_or(0);
            let wo = pool_out_len(w, *kernel, stride.1, *padding).unwrap_or(0);
            let src = x.as_slice().expect("standard layout");
            let mut out = Vec::with_capacity(b * c * ho * wo);
            let mut argmax = Vec::with_capacity(b * c * ho * wo);
            for plane in 0..b * c {
                let base = plane * h * w;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        let h0 = (oh * stride.0).saturating_sub(*padding);
                        let h1 = (oh * stride.0 + kernel).saturating_sub(*padding).min(h);
                        let w0 = (ow * stride.1).saturating_sub(*padding);
                        let w1 = (ow * stride.1 + kernel).saturating_sub(*padding).min(w);
                        for ih in h0..h1 {
                            if w0 >= w1 {
                                break;
                            }
                            let row = base + ih * w;
                            for (iw, &v) in src[row + w0..row + w1].iter().enumerate() {
                                if v > best || best_idx == usize::MAX {
                                    best = v;
                                    best_idx = row + w0 + iw;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
            tape.caches.push(Cache::Pool {
                argmax,
                input_shape: vec![b, c, h, w],
            });
            Ok(ArrayD::from_shape_vec(vec![b, c, ho, wo], out).expect("pool output shape"))
        }
        Layer::Flatten => {
            let shape = x.shape().to_vec();
            let b = shape[0];
            let rest: usize = shape[1..].iter().product();
            let flat = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(vec![b, rest])
                .map_err(|e| Error::config(e.to_string()))?;
            tape.caches.push(Cache::Flatten { input_shape: shape });
            Ok(flat)
        }
        Layer::Linear { name, .. } => {
            let x = to2(x)?;
            let weight = param2(params, &format!("{name}.weight"))?;
            let bias = param1(params, &format!("{name}.bias"))?;
            let mut y = x.dot(&weight.t());
            y += &bias;
            tape.caches.push(Cache::Linear { input: x });
            Ok(y.into_dyn())
        }
    }
}

fn backward_layer(
    layer: &Layer,
    params: &ParameterSet,
    cache: Cache,
    g: ArrayD<f64>,
    mode: Mode,
    grads: Option<&mut Vec<(String, ArrayD<f64>)>>,
) -> Result<ArrayD<f64>> {
    let trainable = |n: &str| params.get(n).map(|p| p.trainable).unwrap_or(false);
    match (layer, cache) {
        (
            Layer::Conv2d {
                name,
                out_channels,
                kernel,
                stride,
                ..
            },
            Cache::Conv { cols, input_dim, out_hw },
        ) => {
            let (b, c, _, _) = input_dim;
            let l = out_hw.0 * out_hw.1;
            let g = to4(g)?;
            let g2 = g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((b, *out_channels, l))
                .map_err(|e| Error::config(e.to_string()))?
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((*out_channels, b * l))
                .map_err(|e| Error::config(e.to_string()))?;
            let wname = format!("{name}.weight");
            let bname = format!("{name}.bias");
            if let Some(grads) = grads {
                if trainable(&wname) {
                    let dw = g2.dot(&cols.t());
                    let dw = dw
                        .into_shape_with_order(vec![*out_channels, c, *kernel, *kernel])
                        .map_err(|e| Error::config(e.to_string()))?;
                    grads.push((wname.clone(), dw));
                }
                if trainable(&bname) {
                    grads.push((bname, g2.sum_axis(Axis(1)).into_dyn()));
                }
            }
            let w2 = param4(params, &wname)?
                .into_shape_with_order((*out_channels, c * kernel * kernel))
                .map_err(|e| Error::config(e.to_string()))?;
            let dcols = w2.t().dot(&g2);
            Ok(col2im(&dcols, input_dim, *kernel, *stride, out_hw).into_dyn())
        }
        (Layer::BatchNorm2d { name, channels }, Cache::BatchNorm { xhat, inv_std }) => {
            let g = to4(g)?;
            let gamma = param1(params, &format!("{name}.gamma"))?;
            let (b, _, h, w) = g.dim();
            let n = (b * h * w) as f64;
            let mut dgamma = Array1::<f64>::zeros(*channels);
            let mut dbeta = Array1::<f64>::zeros(*channels);
            let mut dx = Array4::<f64>::zeros(g.raw_dim());
            for ch in 0..*channels {
                let gs = g.slice(s![.., ch, .., ..]);
                let xs = xhat.slice(s![.., ch, .., ..]);
                let sum_g: f64 = gs.sum();
                let sum_gx: f64 = gs.iter().zip(xs.iter()).map(|(a, b)| a * b).sum();
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                let scale = gamma[ch] * inv_std[ch];
                let mut dxs = dx.slice_mut(s![.., ch, .., ..]);
                match mode {
                    Mode::Train => {
                        ndarray::Zip::from(&mut dxs).and(&gs).and(&xs).for_each(|d, &gv, &xv| {
                            *d = scale * (gv - sum_g / n - xv * sum_gx / n);
                        });
                    }
                    Mode::Eval => {
                        ndarray::Zip::from(&mut dxs).and(&gs).for_each(|d, &gv| *d = scale * gv);
                    }
                }
            }
            if let Some(grads) = grads {
                let gname = format!("{name}.gamma");
                let bname = format!("{name}.beta");
                if trainable(&gname) {
                    grads.push((gname, dgamma.into_dyn()));
                }
                if trainable(&bname) {
                    grads.push((bname, dbeta.into_dyn()));
                }
            }
            Ok(dx.into_dyn())
        }
        (Layer::Relu, Cache::Relu { output }) => {
            let mut g = g;
            g.zip_mut_with(&output, |gv, &o| {
                if o <= 0.0 {
                    *gv = 0.0;
                }
            });
            Ok(g)
        }
        (Layer::MaxPool2d { .. }, Cache::Pool { argmax, input_shape }) => {
            let g = g.as_standard_layout().into_owned();
            let gs = g.as_slice().expect("standard layout");
            let mut dx = vec![0.0; input_shape.iter().product()];
            for (&idx, &gv) in argmax.iter().zip(gs) {
                dx[idx] += gv;
            }
            Ok(ArrayD::from_shape_vec(input_shape, dx).expect("pool input shape"))
        }
        (Layer::Flatten, Cache::Flatten { input_shape }) => g
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(input_shape)
            .map_err(|e| Error::config(e.to_string())),
        (Layer::Linear { name, .. }, Cache::Linear { input }) => {
            let g = to2(g)?;
            let wname = format!("{name}.weight");
            let bname = format!("{name}.bias");
            if let Some(grads) = grads {
                if trainable(&wname) {
                    grads.push((wname.clone(), g.t().dot(&input).into_dyn()));
                }
                if trainable(&bname) {
                    grads.push((bname, g.sum_axis(Axis(0)).into_dyn()));
                }
            }
            let weight = param2(params, &wname)?;
            Ok(g.dot(&weight).into_dyn())
        }
        _ => Err(Error::config("tape does not match network layout")),
    }
}

/// Unfolds `[B,C,H,W]` into `[C*k*k, B*Ho*Wo]` patches with zero padding.
/// Output positions `[lo, hi)` whose input index `o * stride + offset` lies in `[0, len)`.
fn valid_range(out_len: usize, len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 { 0 } else { (-offset as usize).div_ceil(stride) };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last as usize / stride + 1).min(out_len) };
    (lo, hi.max(lo))
}

fn im2col(x: &Array4<f64>, kernel: usize, stride: (usize, usize), out_hw: (usize, usize)) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let (ho, wo) = out_hw;
    let pad = (kernel / 2) as isize;
    let l = ho * wo;
    let ncols = b * l;
    let src = x.as_slice().expect("standard layout");
    let mut cols = vec![0.0; c * kernel * kernel * ncols];
    for ch in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ch * kernel + ki) * kernel + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &src[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * stride.0) as isize + ki as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                        let dst_row = &mut dst[bi * l + oh * wo..bi * l + (oh + 1) * wo];
                        let (lo, hi) = valid_range(wo, w, stride.1, kj as isize - pad);
                        if lo == hi {
                            continue;
                        }
                        let first = (lo * stride.1) as isize + kj as isize - pad;
                        for (d, &v) in dst_row[lo..hi]
                            .iter_mut()
                            .zip(src_row[first as usize..].iter().step_by(stride.1))
                        {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * kernel * kernel, ncols), cols).expect("im2col shape")
}

fn col2im(
    cols: &Array2<f64>,
    input_dim: (usize, usize, usize, usize),
    kernel: usize,
    stride: (usize, usize),
    out_hw: (usize, usize),
) -> Array4<f64> {
    let (b, c, h, w) = input_dim;
    let (ho, wo) = out_hw;
    let pad = (kernel / 2) as isize;
    let l = ho * wo;
    let ncols = b * l;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut dx = vec![0.0; b * c * h * w];
    for ch in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ch * kernel + ki) * kernel + kj;
                let srow = &src[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &mut dx[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * stride.0) as isize + ki as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let (lo, hi) = valid_range(wo, w, stride.1, kj as isize - pad);
                        if lo == hi {
                            continue;
                        }
                        let first = (lo * stride.1) as isize + kj as isize - pad;
                        let prow = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        let grow = &srow[bi * l + oh * wo + lo..bi * l + oh * wo + hi];
                        for (d, &g) in prow[first as usize..].iter_mut().step_by(stride.1).zip(grow) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((b, c, h, w), dx).expect("col2im shape")
}
