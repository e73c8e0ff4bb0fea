//! End-to-end pipeline: train on source, adapt with both arms, evaluate and
//! measure divergences. Shared by the command-line tool and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::adaptation::{run_adaptation, AdaptInputs, AdaptOutcome, CriticUpdate, Method};
use crate::data::{Dataset, ShiftConfig};
use crate::divergence::{measure_adaptation, DivergenceConfig, DivergenceMeasurement};
use crate::domain::{AdaptConfig, ParameterSet};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, BeforeAfter, DivergenceBlock, EvalReport, ModelKind, ModelReport};
use crate::models::{ClassifierSpec, CriticSpec, FeatureExtractorSpec, ModelSpec, Models};
use crate::source_training::{train_source, SourceModel, SourceTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Two small conv layers; fast enough for desk-scale runs.
    #[default]
    Toy,
    /// The five-layer extractor.
    FullSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: ShiftConfig,
    pub extractor: ExtractorKind,
    pub source: SourceTrainConfig,
    pub adapt: AdaptConfig,
    pub divergence: DivergenceConfig,
}

/// Epoch cap of the desk profile; the adaptation default is 300.
pub const DESK_MAX_EPOCHS: usize = 30;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ShiftConfig::default(),
            extractor: ExtractorKind::Toy,
            source: SourceTrainConfig::default(),
            adapt: AdaptConfig {
                max_epochs: DESK_MAX_EPOCHS,
                ..AdaptConfig::default()
            },
            divergence: DivergenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets `seed` everywhere randomness is drawn.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.source.seed = seed;
        self.adapt.seed = seed;
        self.divergence.seed = seed;
        self
    }

    pub fn model_spec(&self, num_classes: usize) -> ModelSpec {
        model_spec(self.extractor, self.data.time_frames, self.data.mel_bands, num_classes)
    }
}

pub fn model_spec(kind: ExtractorKind, time_frames: usize, mel_bands: usize, num_classes: usize) -> ModelSpec {
    match kind {
        ExtractorKind::Toy => ModelSpec::toy(time_frames, mel_bands, num_classes),
        ExtractorKind::FullSize => ModelSpec {
            extractor: FeatureExtractorSpec::full_size(time_frames, mel_bands),
            classifier: ClassifierSpec::new(num_classes),
            critic: CriticSpec::default(),
        },
    }
}

/// Micro/macro accuracy and confusion of `h(M(.))` on the source and target test splits.
pub fn model_report(models: &Models, m: &ParameterSet, h: &ParameterSet, dataset: &Dataset, kind: ModelKind) -> Result<ModelReport> {
    Ok(ModelReport {
        model: kind,
        source: evaluate(models, m, h, &dataset.source.test)?,
        target: evaluate(models, m, h, dataset.target.test.for_evaluation())?,
    })
}

/// Divergences on the held-out test splits before and after adapting to `mt`.
pub fn divergence_block(
    models: &Models,
    ms: &ParameterSet,
    mt: &ParameterSet,
    dataset: &Dataset,
    kind: ModelKind,
    config: &DivergenceConfig,
) -> Result<(DivergenceBlock, DivergenceMeasurement)> {
    let m = measure_adaptation(
        models,
        ms,
        mt,
        dataset.source.test.features()?,
        dataset.target.test.for_evaluation().features()?,
        config,
    )?;
    let block = DivergenceBlock {
        model: kind,
        critic_wasserstein_estimate: BeforeAfter {
            before: m.critic_before.gap,
            after: m.critic_after.gap,
        },
        hdh_bound_estimate: BeforeAfter {
            before: m.sliced_hdh_before,
            after: m.sliced_hdh_after,
        },
        hdh_network_classifier: BeforeAfter {
            before: m.hdh_before,
            after: m.hdh_after,
        },
    };
    Ok((block, m))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub source_model: SourceModel,
    pub wgan: AdaptOutcome,
    pub gan: AdaptOutcome,
    pub divergence: DivergenceMeasurement,
}

pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentOutcome> {
    run_experiment_observed(config, dataset, &mut |_| {})
}

/// As [`run_experiment`], calling `observer` after every WGAN critic update.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    observer: &mut dyn FnMut(&CriticUpdate<'_>),
) -> Result<ExperimentOutcome> {
    if dataset.time_frames != config.data.time_frames || dataset.mel_bands != config.data.mel_bands {
        return Err(Error::config("dataset shape differs from the configured time/mel sizes"));
    }
    let models = Models::new(config.model_spec(dataset.num_classes()))?;
    let source_model = train_source(&models, &dataset.source.train, &dataset.source.valid, &config.source)?;
    let (ms, h) = (&source_model.extractor_params, &source_model.classifier_params);
    let target = dataset.target.train.unlabeled();
    let inputs = AdaptInputs {
        models: &models,
        ms_params: ms,
        h_star_params: h,
        source: &dataset.source.train,
        target: &target,
    };
    let wgan = run_adaptation(Method::Wgan, inputs, &config.adapt, observer)?;
    let gan = run_adaptation(Method::Gan, inputs, &config.adapt, &mut |_| {})?;

    let echo = serde_json::to_value(config).map_err(|e| Error::config(e.to_string()))?;
    let mut report = EvalReport::new(config.seed, dataset.class_names.clone(), echo);
    report.set_model(model_report(&models, ms, h, dataset, ModelKind::NonAdapted)?);
    report.set_model(model_report(&models, &wgan.mt_params, h, dataset, ModelKind::AdaptedWgan)?);
    report.set_model(model_report(&models, &gan.mt_params, h, dataset, ModelKind::AdaptedGan)?);
    let (block, divergence) = divergence_block(&models, ms, &wgan.mt_params, dataset, ModelKind::AdaptedWgan, &config.divergence)?;
    report.divergence.push(block);
    Ok(ExperimentOutcome {
        report,
        source_model,
        wgan,
        gan,
        divergence,
    })
}
