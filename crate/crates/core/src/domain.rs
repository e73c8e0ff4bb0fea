//! Value types shared by every stage of the pipeline.

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::RmsPropConfig;

/// Batch of log-mel-like inputs laid out as `[batch, 1, time_frames, mel_bands]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array4<f64>,
}

impl FeatureTensor {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (_, channels, time, mel) = data.dim();
        if channels != 1 {
            return Err(Error::rejected(format!(
                "feature tensors carry exactly one channel, got {channels}"
            )));
        }
        if time == 0 || mel == 0 {
            return Err(Error::rejected("time_frames and mel_bands must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected("feature tensor contains non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn time_frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn mel_bands(&self) -> usize {
        self.data.dim().3
    }

    /// Gathers the given rows into a new batch.
    pub fn select(&self, rows: &[usize]) -> FeatureTensor {
        FeatureTensor {
            data: self.data.select(Axis(0), rows),
        }
    }

    /// Stacks batches along the batch axis. All parts must share time/mel dims.
    pub fn concat(parts: &[FeatureTensor]) -> Result<FeatureTensor> {
        if parts.is_empty() {
            return Err(Error::rejected("cannot concatenate zero feature tensors"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::rejected(format!("incompatible feature shapes: {e}")))?;
        Ok(FeatureTensor { data })
    }
}

/// One-hot class targets, `[batch, num_classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    data: Array2<f64>,
}

impl LabelVector {
    pub fn from_indices(indices: &[usize], num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::rejected("num_classes must be positive"));
        }
        let mut data = Array2::zeros((indices.len(), num_classes));
        for (row, &k) in indices.iter().enumerate() {
            if k >= num_classes {
                return Err(Error::rejected(format!(
                    "class index {k} out of range for {num_classes} classes"
                )));
            }
            data[[row, k]] = 1.0;
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn batch(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.data.ncols()
    }

    /// Position of the hot entry of every row.
    pub fn class_indices(&self) -> Vec<usize> {
        self.data
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> LabelVector {
        LabelVector {
            data: self.data.select(Axis(0), rows),
        }
    }
}

/// Single-row one-hot encoding of `index` among `num_classes` classes.
pub fn onehot(index: usize, num_classes: usize) -> Result<LabelVector> {
    LabelVector::from_indices(&[index], num_classes)
}

/// Output of a feature extractor, `[batch, latent_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRep {
    data: Array2<f64>,
}

impl LatentRep {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("latent representation contains non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.data.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> LatentRep {
        LatentRep {
            data: self.data.select(Axis(0), rows),
        }
    }
}

/// Row-stochastic class posteriors produced by a classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    data: Array2<f64>,
}

impl ClassPosterior {
    pub(crate) fn from_softmax(data: Array2<f64>) -> Self {
        debug_assert!(data
            .rows()
            .into_iter()
            .all(|r| (r.sum() - 1.0).abs() < 1e-6));
        Self { data }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.data
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// One unbounded scalar per sample from the domain critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticScore {
    data: Array1<f64>,
}

impl CriticScore {
    pub(crate) fn new(data: Array1<f64>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    /// Binary code used by domain classifiers: source is 0, target is 1.
    pub fn code(self) -> u8 {
        match self {
            DomainTag::Source => 0,
            DomainTag::Target => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: ArrayD<f64>,
    pub trainable: bool,
}

/// Named weights of one network, in insertion order.
///
/// Frozen entries (batch-norm running statistics) travel with the weights but
/// never receive gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: IndexMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(name, Parameter { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.entries.get_mut(name)
    }

    /// Looks up a value, failing with a configuration error if absent.
    pub fn value(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable_scalars(&self) -> usize {
        self.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    /// Same names in the same order with the same shapes.
    pub fn is_copy_compatible(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, a), (nb, b))| na == nb && a.value.shape() == b.value.shape())
    }

    /// Exact equality of every stored bit, including the trainable flags.
    pub fn bit_identical(&self, other: &ParameterSet) -> bool {
        self.is_copy_compatible(other)
            && self.entries.values().zip(other.entries.values()).all(|(a, b)| {
                a.trainable == b.trainable
                    && a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Largest absolute value over trainable entries.
    pub fn max_abs_trainable(&self) -> f64 {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .flat_map(|(_, p)| p.value.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn set_all_trainable(&mut self, trainable: bool, filter: impl Fn(&str) -> bool) {
        for (name, p) in self.entries.iter_mut() {
            if filter(name) {
                p.trainable = trainable;
            }
        }
    }
}

/// Deep copy used to initialise the adapted extractor from the source one.
pub fn copy_parameters(src: &ParameterSet) -> ParameterSet {
    src.clone()
}

/// Hyper-parameters of the adversarial adaptation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub clip_c: f64,
    pub batch_size: usize,
    pub n_d: usize,
    pub max_epochs: usize,
    pub saturation_window: usize,
    pub saturation_tol: f64,
    /// Outer steps per epoch. `None` means one pass over the target split.
    pub steps_per_epoch: Option<usize>,
    pub optimizer: RmsPropConfig,
    /// How batch-norm layers of `M_T` behave while it is being adapted.
    pub target_batch_norm: TargetBatchNorm,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBatchNorm {
    /// Keep the running statistics inherited from `M_S`.
    #[default]
    Frozen,
    /// Normalise with batch statistics and fold target-batch statistics
    /// into the running estimates after each generator step.
    TargetBatch,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            clip_c: 0.01,
            batch_size: 16,
            n_d: 5,
            max_epochs: 300,
            saturation_window: 20,
            saturation_tol: 1e-3,
            steps_per_epoch: None,
            optimizer: RmsPropConfig::default(),
            target_batch_norm: TargetBatchNorm::Frozen,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::config("clip_c must be positive"));
        }
        if self.batch_size == 0 || self.n_d == 0 || self.max_epochs == 0 || self.saturation_window == 0 {
            return Err(Error::config("batch_size, n_d, max_epochs and saturation_window must be positive"));
        }
        if !(self.saturation_tol >= 0.0) {
            return Err(Error::config("saturation_tol must be non-negative"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("steps_per_epoch must be positive"));
        }
        self.optimizer.validate()
    }
}
