//! Feature extractor `M`, label classifier `h` and domain critic `h_d`.

use ndarray::{Array1, Array2, Axis, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ClassPosterior, CriticScore, FeatureTensor, LatentRep, ParameterSet};
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Network, Tape};
use crate::optim::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel_width: usize,
    pub out_channels: usize,
    /// `(time, mel)` stride.
    pub stride: (usize, usize),
    pub batch_norm: bool,
    pub pool: Option<PoolSpec>,
}

/// Convolutional stack; every layer is conv → [batch-norm] → ReLU → [max-pool].
///
/// Convolutions use zero "same" padding of `kernel / 2`; pools pad by
/// `kernel / 2` and ignore the padding when taking the maximum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub time_frames: usize,
    pub mel_bands: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
}

impl FeatureExtractorSpec {
    /// Five-layer extractor with widths 11/5/3/3/3 and 48/128/192/192/128 channels.
    pub fn full_size(time_frames: usize, mel_bands: usize) -> Self {
        let widths = [11, 5, 3, 3, 3];
        let channels = [48, 128, 192, 192, 128];
        let pools = [
            Some(PoolSpec { kernel: 3, stride: (1, 2) }),
            Some(PoolSpec { kernel: 3, stride: (2, 2) }),
            None,
            None,
            Some(PoolSpec { kernel: 3, stride: (1, 2) }),
        ];
        let conv_layers = (0..5)
            .map(|i| ConvLayerSpec {
                kernel_width: widths[i],
                out_channels: channels[i],
                stride: if i < 2 { (2, 3) } else { (1, 1) },
                batch_norm: pools[i].is_some(),
                pool: pools[i],
            })
            .collect();
        Self {
            time_frames,
            mel_bands,
            conv_layers,
        }
    }

    /// Two-layer 8/16-channel variant for desk-scale runs.
    pub fn toy(time_frames: usize, mel_bands: usize) -> Self {
        let pool = Some(PoolSpec { kernel: 3, stride: (2, 2) });
        Self {
            time_frames,
            mel_bands,
            conv_layers: vec![
                ConvLayerSpec {
                    kernel_width: 5,
                    out_channels: 8,
                    stride: (2, 3),
                    batch_norm: true,
                    pool,
                },
                ConvLayerSpec {
                    kernel_width: 3,
                    out_channels: 16,
                    stride: (2, 2),
                    batch_norm: true,
                    pool,
                },
            ],
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut in_channels = 1;
        for (i, l) in self.conv_layers.iter().enumerate() {
            layers.push(Layer::Conv2d {
                name: format!("conv{i}"),
                in_channels,
                out_channels: l.out_channels,
                kernel: l.kernel_width,
                stride: l.stride,
            });
            if l.batch_norm {
                layers.push(Layer::BatchNorm2d {
                    name: format!("bn{i}"),
                    channels: l.out_channels,
                });
            }
            layers.push(Layer::Relu);
            if let Some(p) = l.pool {
                layers.push(Layer::MaxPool2d {
                    kernel: p.kernel,
                    stride: p.stride,
                    padding: p.kernel / 2,
                });
            }
            in_channels = l.out_channels;
        }
        layers.push(Layer::Flatten);
        layers
    }
}

/// Feed-forward head over the latent vector; softmax output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    /// Widths of all three layers; the last equals the number of classes.
    pub layer_widths: Vec<usize>,
}

impl ClassifierSpec {
    pub fn new(num_classes: usize) -> Self {
        Self {
            layer_widths: vec![256, 256, num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }
}

/// Scalar-output feed-forward critic with a linear final layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub layer_widths: Vec<usize>,
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            layer_widths: vec![128, 64, 1],
        }
    }
}

fn mlp_layers(prefix: &str, input: usize, widths: &[usize]) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 {
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Linear {
            name: format!("{prefix}{i}"),
            in_features: fan_in,
            out_features: w,
        });
        fan_in = w;
    }
    layers
}

/// Everything needed to rebuild the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub extractor: FeatureExtractorSpec,
    pub classifier: ClassifierSpec,
    pub critic: CriticSpec,
}

impl ModelSpec {
    pub fn toy(time_frames: usize, mel_bands: usize, num_classes: usize) -> Self {
        Self {
            extractor: FeatureExtractorSpec::toy(time_frames, mel_bands),
            classifier: ClassifierSpec::new(num_classes),
            critic: CriticSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    spec: FeatureExtractorSpec,
    net: Network,
}

impl FeatureExtractor {
    pub fn new(spec: FeatureExtractorSpec) -> Result<Self> {
        if spec.conv_layers.is_empty() {
            return Err(Error::config("feature extractor needs at least one conv layer"));
        }
        let net = Network::new(spec.layers(), vec![1, spec.time_frames, spec.mel_bands])?;
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_shape()[0]
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.net.init_params(rng)
    }

    pub fn forward(&self, params: &ParameterSet, x: &FeatureTensor, mode: Mode) -> Result<LatentRep> {
        Ok(self.forward_tape(params, x, mode)?.0)
    }

    pub fn forward_tape(&self, params: &ParameterSet, x: &FeatureTensor, mode: Mode) -> Result<(LatentRep, Tape)> {
        let (z, tape) = self.net.forward(params, x.data().clone().into_dyn(), mode)?;
        let z = z
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::config(e.to_string()))?;
        Ok((LatentRep::new(z)?, tape))
    }

    /// Gradient of the trainable extractor weights given `dL/dz`.
    pub fn backward(&self, params: &ParameterSet, tape: Tape, grad_z: Array2<f64>) -> Result<GradientSet> {
        Ok(self.net.backward(params, tape, grad_z.into_dyn(), true)?.0)
    }

    pub fn update_running_stats(&self, params: &mut ParameterSet, tape: &Tape) -> Result<()> {
        self.net.update_running_stats(params, &tape.batch_stats)
    }
}

fn check_finite_latent(z: &LatentRep) -> Result<()> {
    if z.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("latent input contains non-finite entries"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ClassifierSpec,
    net: Network,
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, latent_dim: usize) -> Result<Self> {
        if spec.layer_widths.len() != 3 || spec.layer_widths.contains(&0) {
            return Err(Error::config("classifier needs exactly three non-empty layers"));
        }
        let net = Network::new(mlp_layers("fc", latent_dim, &spec.layer_widths), vec![latent_dim])?;
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.net.init_params(rng)
    }

    pub fn forward(&self, params: &ParameterSet, z: &LatentRep) -> Result<ClassPosterior> {
        Ok(self.forward_tape(params, z)?.0)
    }

    pub fn forward_tape(&self, params: &ParameterSet, z: &LatentRep) -> Result<(ClassPosterior, Tape)> {
        check_finite_latent(z)?;
        let (logits, tape) = self.net.forward(params, z.data().clone().into_dyn(), Mode::Eval)?;
        let logits = logits
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::config(e.to_string()))?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("classifier logits are not finite"));
        }
        Ok((ClassPosterior::from_softmax(softmax_rows(logits)), tape))
    }

    /// Back-propagates `dL/dposterior` through the softmax and the layers.
    /// Returns parameter gradients (if requested) and `dL/dz`.
    pub fn backward(
        &self,
        params: &ParameterSet,
        tape: Tape,
        posterior: &ClassPosterior,
        grad_posterior: &Array2<f64>,
        param_grads: bool,
    ) -> Result<(GradientSet, Array2<f64>)> {
        let p = posterior.data();
        // softmax Jacobian: dl_i = p_i * (g_i - sum_j g_j p_j)
        let dot = (grad_posterior * p).sum_axis(Axis(1));
        let mut grad_logits = grad_posterior.clone();
        for ((mut row, prow), d) in grad_logits.rows_mut().into_iter().zip(p.rows()).zip(dot.iter()) {
            row.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - d));
        }
        let (grads, dz) = self.net.backward(params, tape, grad_logits.into_dyn(), param_grads)?;
        let dz = dz.into_dimensionality::<Ix2>().map_err(|e| Error::config(e.to_string()))?;
        Ok((grads, dz))
    }
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

#[derive(Debug, Clone)]
pub struct Critic {
    spec: CriticSpec,
    net: Network,
}

impl Critic {
    pub fn new(spec: CriticSpec, latent_dim: usize) -> Result<Self> {
        if spec.layer_widths.last() != Some(&1) || spec.layer_widths.contains(&0) {
            return Err(Error::config("critic must end in a single linear unit"));
        }
        let net = Network::new(mlp_layers("fc", latent_dim, &spec.layer_widths), vec![latent_dim])?;
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.net.init_params(rng)
    }

    pub fn forward(&self, params: &ParameterSet, z: &LatentRep) -> Result<CriticScore> {
        Ok(self.forward_tape(params, z)?.0)
    }

    pub fn forward_tape(&self, params: &ParameterSet, z: &LatentRep) -> Result<(CriticScore, Tape)> {
        check_finite_latent(z)?;
        let (out, tape) = self.net.forward(params, z.data().clone().into_dyn(), Mode::Eval)?;
        let scores: Array1<f64> = out.iter().copied().collect();
        Ok((CriticScore::new(scores), tape))
    }

    /// Back-propagates `dL/dscore`; returns parameter gradients (if requested) and `dL/dz`.
    pub fn backward(
        &self,
        params: &ParameterSet,
        tape: Tape,
        grad_scores: &Array1<f64>,
        param_grads: bool,
    ) -> Result<(GradientSet, Array2<f64>)> {
        let g = grad_scores.clone().insert_axis(Axis(1)).into_dyn();
        let (grads, dz) = self.net.backward(params, tape, g, param_grads)?;
        let dz = dz.into_dimensionality::<Ix2>().map_err(|e| Error::config(e.to_string()))?;
        Ok((grads, dz))
    }
}

/// The three networks built from one [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Models {
    pub spec: ModelSpec,
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
    pub critic: Critic,
}

impl Models {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let extractor = FeatureExtractor::new(spec.extractor.clone())?;
        let latent = extractor.latent_dim();
        let classifier = Classifier::new(spec.classifier.clone(), latent)?;
        let critic = Critic::new(spec.critic.clone(), latent)?;
        Ok(Self {
            spec,
            extractor,
            classifier,
            critic,
        })
    }
}
