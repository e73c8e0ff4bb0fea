//! Stage one: fit extractor and classifier on labeled source data by
//! minimising categorical cross-entropy over one-hot targets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSplit;
use crate::domain::{ClassPosterior, FeatureTensor, LabelVector, ParameterSet};
use crate::error::{ensure_finite, Error, Result};
use crate::evaluation::evaluate;
use crate::models::{Classifier, FeatureExtractor, Models};
use crate::nn::{BatchStats, Mode};
use crate::optim::{rmsprop_step, GradientSet, Objective, OptimizerState, RmsPropConfig};
use crate::rng::{stream_rng, Stream};

/// Posteriors are clamped below at this value before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelLoss {
    /// `-sum_n y_n' log h(M(x_n))`.
    pub sum: f64,
    /// `sum / batch`; this is what gets optimised.
    pub mean: f64,
}

/// Cross-entropy of `posterior` against one-hot `labels`.
pub fn cross_entropy(posterior: &ClassPosterior, labels: &LabelVector) -> Result<LabelLoss> {
    let p = posterior.data();
    if p.nrows() == 0 {
        return Err(Error::rejected("cross-entropy of an empty batch"));
    }
    if p.dim() != labels.data().dim() {
        return Err(Error::rejected("posterior and label shapes differ"));
    }
    let sum: f64 = p
        .rows()
        .into_iter()
        .zip(labels.class_indices())
        .map(|(row, k)| -row[k].max(LOG_CLAMP).ln())
        .sum();
    ensure_finite(sum, "label loss")?;
    Ok(LabelLoss {
        sum,
        mean: sum / p.nrows() as f64,
    })
}

/// `dL_mean / dposterior`; zero where the clamp is active.
pub(crate) fn cross_entropy_grad(posterior: &ClassPosterior, labels: &LabelVector, scale: f64) -> Array2<f64> {
    let p = posterior.data();
    let mut g = Array2::zeros(p.raw_dim());
    for (i, k) in labels.class_indices().into_iter().enumerate() {
        let pk = p[[i, k]];
        if pk > LOG_CLAMP {
            g[[i, k]] = -scale / pk;
        }
    }
    g
}

/// Label loss of classifier `h` on extractor `M` for one labeled batch.
pub fn label_loss(
    models: &Models,
    h_params: &ParameterSet,
    m_params: &ParameterSet,
    x: &FeatureTensor,
    y: &LabelVector,
    mode: Mode,
) -> Result<LabelLoss> {
    if x.batch() == 0 {
        return Err(Error::rejected("empty batch"));
    }
    let z = models.extractor.forward(m_params, x, mode)?;
    let post = models.classifier.forward(h_params, &z)?;
    cross_entropy(&post, y)
}

/// Result of one forward/backward pass of the label loss.
pub struct LabelStep {
    pub loss: LabelLoss,
    pub classifier_grads: GradientSet,
    pub extractor_grads: GradientSet,
    /// Extractor batch statistics for a later running-stats update.
    pub batch_stats: Vec<BatchStats>,
    pub predicted: Vec<usize>,
}

/// Mean label loss and gradients for both the classifier and the extractor.
pub fn label_loss_and_gradients(
    extractor: &FeatureExtractor,
    classifier: &Classifier,
    h_params: &ParameterSet,
    m_params: &ParameterSet,
    x: &FeatureTensor,
    y: &LabelVector,
    mode: Mode,
) -> Result<LabelStep> {
    let (z, m_tape) = extractor.forward_tape(m_params, x, mode)?;
    let (post, h_tape) = classifier.forward_tape(h_params, &z)?;
    let loss = cross_entropy(&post, y)?;
    let dpost = cross_entropy_grad(&post, y, 1.0 / x.batch() as f64);
    let (h_grads, dz) = classifier.backward(h_params, h_tape, &post, &dpost, true)?;
    let batch_stats = m_tape.batch_stats.clone();
    let m_grads = extractor.backward(m_params, m_tape, dz)?;
    Ok(LabelStep {
        loss,
        classifier_grads: h_grads,
        extractor_grads: m_grads,
        batch_stats,
        predicted: post.argmax(),
    })
}

/// Mean label loss as a function of the classifier weights alone.
pub struct LabelLossWrtClassifier<'a> {
    pub models: &'a Models,
    pub m_params: &'a ParameterSet,
    pub x: &'a FeatureTensor,
    pub y: &'a LabelVector,
    pub mode: Mode,
}

impl Objective for LabelLossWrtClassifier<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(label_loss(self.models, params, self.m_params, self.x, self.y, self.mode)?.mean)
    }

    fn loss_and_gradient(&self, params: &ParameterSet) -> Result<(f64, GradientSet)> {
        let step = label_loss_and_gradients(
            &self.models.extractor,
            &self.models.classifier,
            params,
            self.m_params,
            self.x,
            self.y,
            self.mode,
        )?;
        Ok((step.loss.mean, step.classifier_grads))
    }
}

/// Mean label loss as a function of the extractor weights alone.
pub struct LabelLossWrtExtractor<'a> {
    pub models: &'a Models,
    pub h_params: &'a ParameterSet,
    pub x: &'a FeatureTensor,
    pub y: &'a LabelVector,
    pub mode: Mode,
}

impl Objective for LabelLossWrtExtractor<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(label_loss(self.models, self.h_params, params, self.x, self.y, self.mode)?.mean)
    }

    fn loss_and_gradient(&self, params: &ParameterSet) -> Result<(f64, GradientSet)> {
        let step = label_loss_and_gradients(
            &self.models.extractor,
            &self.models.classifier,
            self.h_params,
            params,
            self.x,
            self.y,
            self.mode,
        )?;
        Ok((step.loss.mean, step.extractor_grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: RmsPropConfig,
    pub seed: u64,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: RmsPropConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEpoch {
    pub epoch: usize,
    pub loss_mean: f64,
    /// Accuracy on the training batches as they were seen during the epoch.
    pub accuracy: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SourceModel {
    pub classifier_params: ParameterSet,
    pub extractor_params: ParameterSet,
    pub best_epoch: usize,
    pub history: Vec<SourceEpoch>,
}

/// Trains `h` and `M` from fresh seeded weights and returns the epoch with
/// the best validation accuracy (earliest on ties).
pub fn train_source(
    models: &Models,
    train: &LabeledSplit,
    valid: &LabeledSplit,
    config: &SourceTrainConfig,
) -> Result<SourceModel> {
    let mut init = stream_rng(config.seed, Stream::Init, 0);
    let m_params = models.extractor.init_params(&mut init)?;
    let h_params = models.classifier.init_params(&mut init)?;
    train_source_from(models, train, valid, config, m_params, h_params)
}

/// As [`train_source`], starting from the given weights.
pub fn train_source_from(
    models: &Models,
    train: &LabeledSplit,
    valid: &LabeledSplit,
    config: &SourceTrainConfig,
    mut m_params: ParameterSet,
    mut h_params: ParameterSet,
) -> Result<SourceModel> {
    config.optimizer.validate()?;
    if train.is_empty() {
        return Err(Error::rejected("source training split is empty"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::config("epochs and batch_size must be positive"));
    }
    if train.num_classes() != models.classifier.num_classes() {
        return Err(Error::config("classifier width does not match the number of classes"));
    }
    if let Some(k) = train.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::config(format!("class {k} is absent from the source training split")));
    }
    models.extractor.network().check_params(&m_params)?;
    models.classifier.network().check_params(&h_params)?;
    let selection = if valid.is_empty() { train } else { valid };

    let mut h_opt = OptimizerState::new(config.optimizer);
    let mut m_opt = OptimizerState::new(config.optimizer);
    let mut shuffle = stream_rng(config.seed, Stream::Batching, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterSet, ParameterSet)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        let mut hits = 0;
        for rows in order.chunks(config.batch_size) {
            let (x, y) = train.batch(rows)?;
            let step = label_loss_and_gradients(
                &models.extractor,
                &models.classifier,
                &h_params,
                &m_params,
                &x,
                &y,
                Mode::Train,
            )?;
            loss_sum += step.loss.sum;
            seen += rows.len();
            hits += rows.iter().zip(&step.predicted).filter(|(&r, &p)| train.labels()[r] == p).count();
            rmsprop_step(&mut h_params, &step.classifier_grads, &mut h_opt, config.learning_rate)?;
            rmsprop_step(&mut m_params, &step.extractor_grads, &mut m_opt, config.learning_rate)?;
            models.extractor.network().update_running_stats(&mut m_params, &step.batch_stats)?;
        }
        let accuracy = hits as f64 / seen as f64;
        let valid_accuracy = evaluate(models, &m_params, &h_params, selection)?.micro_accuracy;
        history.push(SourceEpoch {
            epoch,
            loss_mean: loss_sum / seen as f64,
            accuracy,
            valid_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, ..)| valid_accuracy > *acc) {
            best = Some((valid_accuracy, epoch, m_params.clone(), h_params.clone()));
        }
    }
    let (_, best_epoch, extractor_params, classifier_params) = best.expect("at least one epoch");
    Ok(SourceModel {
        classifier_params,
        extractor_params,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn posterior(rows: Array2<f64>) -> ClassPosterior {
        ClassPosterior::from_softmax(rows)
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = posterior(arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]));
        let y = LabelVector::from_indices(&[0, 1], 3).unwrap();
        let l = cross_entropy(&p, &y).unwrap();
        assert_eq!(l.sum, 0.0);
        assert_eq!(l.mean, 0.0);
    }

    #[test]
    fn uniform_ten_class_is_ln_ten() {
        let p = posterior(Array2::from_elem((1, 10), 0.1));
        let y = LabelVector::from_indices(&[4], 10).unwrap();
        let l = cross_entropy(&p, &y).unwrap();
        assert!((l.sum - 2.302585).abs() < 1e-6);
        assert!((l.sum - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_sample_sum() {
        let p = posterior(arr2(&[[0.5, 0.5], [0.75, 0.25]]));
        let y = LabelVector::from_indices(&[0, 1], 2).unwrap();
        let l = cross_entropy(&p, &y).unwrap();
        assert!((l.sum - 2.079442).abs() < 1e-6);
        assert!((l.mean - 2.079442 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn clamp_keeps_saturated_loss_finite() {
        let p = posterior(arr2(&[[1.0, 0.0]]));
        let y = LabelVector::from_indices(&[1], 2).unwrap();
        let l = cross_entropy(&p, &y).unwrap();
        assert!((l.sum + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = posterior(Array2::zeros((0, 3)));
        let y = LabelVector::from_indices(&[], 3).unwrap();
        assert!(matches!(cross_entropy(&p, &y), Err(Error::RejectedInput(_))));
    }
}
