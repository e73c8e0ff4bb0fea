//! Divergence estimators between source and target latent distributions.
//!
//! * [`wasserstein1d_exact`]: order-1 Wasserstein distance of two equal-size
//!   1-D samples via sorted matching.
//! * [`critic_wasserstein_estimate`]: gap achieved by a fresh weight-clipped
//!   critic on held-out latents. Clipping fixes an unknown Lipschitz scale, so
//!   the value is uncalibrated: only comparisons between estimates made with
//!   the same config mean anything.
//! * [`hdh_bound_estimate`]: plug-in value of `2 |P_S[h=0] + P_T[h=1] - 1|`
//!   for a hard domain classifier `h` (0 = source, 1 = target).

use ndarray::{concatenate, Array1, Axis};
use rand_distr::{Distribution, StandardNormal};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adaptation::{critic_loss_and_grad, latents_of, sigmoid, BatchSampler, Method};
use crate::domain::{DomainTag, FeatureTensor, LatentRep, ParameterSet};
use crate::error::{Error, Result};
use crate::models::{Critic, Models};
use crate::optim::{clip_parameters, rmsprop_step, OptimizerState, RmsPropConfig};
use crate::rng::{stream_rng, Stream};

pub fn wasserstein1d_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::rejected(format!(
            "exact 1-D Wasserstein needs equal non-empty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::rejected("samples must be finite"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `2 |p_source_is_0 + p_target_is_1 - 1|`.
pub fn hdh_from_rates(p_source_is_0: f64, p_target_is_1: f64) -> Result<f64> {
    for p in [p_source_is_0, p_target_is_1] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::rejected(format!("rate {p} outside [0, 1]")));
        }
    }
    Ok(2.0 * (p_source_is_0 + p_target_is_1 - 1.0).abs())
}

/// Hard domain predictions for a batch of latents.
pub trait DomainClassifier {
    fn predict(&self, z: &LatentRep) -> Result<Vec<DomainTag>>;
}

pub fn hdh_bound_estimate(classifier: &dyn DomainClassifier, zs: &LatentRep, zt: &LatentRep) -> Result<f64> {
    if zs.batch() == 0 || zt.batch() == 0 {
        return Err(Error::rejected("H-divergence estimate needs non-empty samples"));
    }
    let rate = |z: &LatentRep, tag: DomainTag| -> Result<f64> {
        let p = classifier.predict(z)?;
        Ok(p.iter().filter(|&&t| t == tag).count() as f64 / p.len() as f64)
    };
    hdh_from_rates(rate(zs, DomainTag::Source)?, rate(zt, DomainTag::Target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceConfig {
    /// Critic updates for the Wasserstein estimate.
    pub critic_steps: usize,
    pub critic_learning_rate: f64,
    pub clip_c: f64,
    /// Updates for the sigmoid domain classifier.
    pub classifier_steps: usize,
    pub classifier_learning_rate: f64,
    /// Optional weight clip for the domain classifier.
    pub classifier_clip: Option<f64>,
    /// Random directions for the sliced bound.
    pub directions: usize,
    pub batch_size: usize,
    /// Share of each sample set held out from fitting.
    pub holdout_fraction: f64,
    pub optimizer: RmsPropConfig,
    pub seed: u64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            critic_steps: 300,
            critic_learning_rate: 5e-4,
            clip_c: 0.01,
            classifier_steps: 200,
            classifier_learning_rate: 1e-3,
            classifier_clip: None,
            directions: 64,
            batch_size: 32,
            holdout_fraction: 0.5,
            optimizer: RmsPropConfig::default(),
            seed: 0,
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.directions == 0 {
            return Err(Error::config("batch_size and directions must be positive"));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::config("clip_c must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("holdout_fraction must lie strictly between 0 and 1"));
        }
        for lr in [self.critic_learning_rate, self.classifier_learning_rate] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config("learning rates must be finite and non-negative"));
            }
        }
        self.optimizer.validate()
    }
}

/// Fit / held-out partition of one latent sample.
struct Halves {
    fit: LatentRep,
    held: LatentRep,
}

fn split(z: &LatentRep, fraction: f64, salt: u32, seed: u64) -> Result<Halves> {
    let n = z.batch();
    if n < 2 {
        return Err(Error::rejected("need at least two latents per domain to hold some out"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Divergence, salt));
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    Ok(Halves {
        fit: z.select(&idx[held..]),
        held: z.select(&idx[..held]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticEstimate {
    /// `mean h(z_T) - mean h(z_S)` on held-out latents.
    pub gap: f64,
    /// `max(gap, 0)`.
    pub estimate: f64,
    /// Standard deviation of the pooled held-out scores.
    pub score_scale: f64,
    /// Mean critic loss per block of 50 updates.
    pub loss_trace: Vec<f64>,
}

fn fit_critic(
    critic: &Critic,
    kind: Method,
    zs: &LatentRep,
    zt: &LatentRep,
    steps: usize,
    lr: f64,
    clip_c: Option<f64>,
    config: &DivergenceConfig,
    salt: u32,
) -> Result<(ParameterSet, Vec<f64>)> {
    let mut params = critic.init_params(&mut stream_rng(config.seed, Stream::Divergence, salt))?;
    if let Some(c) = clip_c {
        clip_parameters(&mut params, c)?;
    }
    let mut opt = OptimizerState::new(config.optimizer);
    let mut src = BatchSampler::new(zs.batch(), stream_rng(config.seed, Stream::Divergence, salt + 1));
    let mut tgt = BatchSampler::new(zt.batch(), stream_rng(config.seed, Stream::Divergence, salt + 2));
    let mut trace = Vec::new();
    let mut block = 0.0;
    for step in 1..=steps {
        let bs = zs.select(&src.next_batch(config.batch_size));
        let bt = zt.select(&tgt.next_batch(config.batch_size));
        let (loss, grads) = critic_loss_and_grad(kind, critic, &params, &bs, &bt, true)?;
        let grads = grads.expect("requested");
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "divergence critic diverged at step {step}; loss trace so far: {trace:?}"
            )));
        }
        rmsprop_step(&mut params, &grads, &mut opt, lr)?;
        if let Some(c) = clip_c {
            clip_parameters(&mut params, c)?;
        }
        block += loss;
        if step % 50 == 0 {
            trace.push(block / 50.0);
            block = 0.0;
        }
    }
    Ok((params, trace))
}

/// Trains a fresh clipped critic with `critic`'s architecture on part of the
/// latents and reports its gap on the rest.
pub fn critic_wasserstein_estimate(
    critic: &Critic,
    zs: &LatentRep,
    zt: &LatentRep,
    config: &DivergenceConfig,
) -> Result<CriticEstimate> {
    config.validate()?;
    let s = split(zs, config.holdout_fraction, 0, config.seed)?;
    let t = split(zt, config.holdout_fraction, 0, config.seed)?;
    let (params, loss_trace) = fit_critic(
        critic,
        Method::Wgan,
        &s.fit,
        &t.fit,
        config.critic_steps,
        config.critic_learning_rate,
        Some(config.clip_c),
        config,
        10,
    )?;
    let ss = critic.forward(&params, &s.held)?;
    let st = critic.forward(&params, &t.held)?;
    let gap = st.mean() - ss.mean();
    let pooled = concatenate(Axis(0), &[ss.data().view(), st.data().view()]).expect("1-d concat");
    let score_scale = pooled.std(0.0);
    Ok(CriticEstimate {
        gap,
        estimate: gap.max(0.0),
        score_scale,
        loss_trace,
    })
}

/// Sigmoid domain classifier; `sigmoid(h(z)) >= 0.5` means source.
#[derive(Debug, Clone)]
pub struct FittedDomainClassifier<'a> {
    pub critic: &'a Critic,
    pub params: ParameterSet,
}

impl DomainClassifier for FittedDomainClassifier<'_> {
    fn predict(&self, z: &LatentRep) -> Result<Vec<DomainTag>> {
        let s = self.critic.forward(&self.params, z)?;
        Ok(s.data()
            .iter()
            .map(|&v| if sigmoid(v) >= 0.5 { DomainTag::Source } else { DomainTag::Target })
            .collect())
    }
}

/// Fits a domain classifier with the discriminator log-loss.
pub fn fit_domain_classifier<'a>(
    critic: &'a Critic,
    zs: &LatentRep,
    zt: &LatentRep,
    config: &DivergenceConfig,
) -> Result<FittedDomainClassifier<'a>> {
    config.validate()?;
    let (params, _) = fit_critic(
        critic,
        Method::Gan,
        zs,
        zt,
        config.classifier_steps,
        config.classifier_learning_rate,
        config.classifier_clip,
        config,
        20,
    )?;
    Ok(FittedDomainClassifier { critic, params })
}

/// Fits a domain classifier on part of the latents and evaluates the bound on the rest.
pub fn hdh_estimate_held_out(critic: &Critic, zs: &LatentRep, zt: &LatentRep, config: &DivergenceConfig) -> Result<f64> {
    config.validate()?;
    let s = split(zs, config.holdout_fraction, 1, config.seed)?;
    let t = split(zt, config.holdout_fraction, 1, config.seed)?;
    let classifier = fit_domain_classifier(critic, &s.fit, &t.fit, config)?;
    hdh_bound_estimate(&classifier, &s.held, &t.held)
}

/// Threshold classifier on the projection `z . direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionThreshold {
    pub direction: Array1<f64>,
    pub threshold: f64,
    /// Whether projections below the threshold are labelled source.
    pub source_below: bool,
}

impl DomainClassifier for ProjectionThreshold {
    fn predict(&self, z: &LatentRep) -> Result<Vec<DomainTag>> {
        if z.latent_dim() != self.direction.len() {
            return Err(Error::rejected("latent width does not match the projection"));
        }
        Ok(z.data()
            .dot(&self.direction)
            .iter()
            .map(|&p| if (p < self.threshold) == self.source_below { DomainTag::Source } else { DomainTag::Target })
            .collect())
    }
}

impl ProjectionThreshold {
    /// Picks the threshold and orientation that maximise
    /// `|P_S[h=0] + P_T[h=1] - 1|` on the given samples.
    pub fn fit(zs: &LatentRep, zt: &LatentRep, direction: Array1<f64>) -> Result<Self> {
        if zs.batch() == 0 || zt.batch() == 0 {
            return Err(Error::rejected("cannot fit a threshold on empty samples"));
        }
        let mut points: Vec<(f64, bool)> = zs.data().dot(&direction).iter().map(|&p| (p, true)).collect();
        points.extend(zt.data().dot(&direction).iter().map(|&p| (p, false)));
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (ns, nt) = (zs.batch() as f64, zt.batch() as f64);
        let (mut s_below, mut t_below) = (0.0, 0.0);
        let mut best = (0.0, f64::NEG_INFINITY, true);
        for i in 0..points.len() {
            if points[i].1 {
                s_below += 1.0;
            } else {
                t_below += 1.0;
            }
            if i + 1 < points.len() && points[i + 1].0 == points[i].0 {
                continue;
            }
            let diff = s_below / ns - t_below / nt;
            if diff.abs() > best.0 {
                let thr = points.get(i + 1).map_or(f64::INFINITY, |next| 0.5 * (points[i].0 + next.0));
                best = (diff.abs(), thr, diff > 0.0);
            }
        }
        Ok(Self {
            direction,
            threshold: best.1,
            source_below: best.2,
        })
    }
}

/// Mean held-out bound over threshold classifiers on random directions.
pub fn sliced_hdh_estimate(zs: &LatentRep, zt: &LatentRep, config: &DivergenceConfig) -> Result<f64> {
    config.validate()?;
    if zs.latent_dim() != zt.latent_dim() {
        return Err(Error::rejected("source and target latents differ in width"));
    }
    let s = split(zs, config.holdout_fraction, 2, config.seed)?;
    let t = split(zt, config.holdout_fraction, 2, config.seed)?;
    let mut rng = stream_rng(config.seed, Stream::Divergence, 30);
    let normal = StandardNormal;
    let mut total = 0.0;
    for _ in 0..config.directions {
        let mut dir: Array1<f64> = (0..zs.latent_dim()).map(|_| normal.sample(&mut rng)).collect();
        let norm = dir.dot(&dir).sqrt();
        dir /= norm;
        let h = ProjectionThreshold::fit(&s.fit, &t.fit, dir)?;
        total += hdh_bound_estimate(&h, &s.held, &t.held)?;
    }
    Ok(total / config.directions as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMeasurement {
    pub critic_before: CriticEstimate,
    pub critic_after: CriticEstimate,
    pub hdh_before: f64,
    pub hdh_after: f64,
    pub sliced_hdh_before: f64,
    pub sliced_hdh_after: f64,
}

/// Estimators on `(M_S(x_S), M_S(x_T))` before and `(M_S(x_S), M_T(x_T))` after adaptation.
pub fn measure_adaptation(
    models: &Models,
    ms: &ParameterSet,
    mt: &ParameterSet,
    source_x: &FeatureTensor,
    target_x: &FeatureTensor,
    config: &DivergenceConfig,
) -> Result<DivergenceMeasurement> {
    let zs = latents_of(models, ms, source_x)?;
    let zt_before = latents_of(models, ms, target_x)?;
    let zt_after = latents_of(models, mt, target_x)?;
    let critic = &models.critic;
    Ok(DivergenceMeasurement {
        critic_before: critic_wasserstein_estimate(critic, &zs, &zt_before, config)?,
        critic_after: critic_wasserstein_estimate(critic, &zs, &zt_after, config)?,
        hdh_before: hdh_estimate_held_out(critic, &zs, &zt_before, config)?,
        hdh_after: hdh_estimate_held_out(critic, &zs, &zt_after, config)?,
        sliced_hdh_before: sliced_hdh_estimate(&zs, &zt_before, config)?,
        sliced_hdh_after: sliced_hdh_estimate(&zs, &zt_after, config)?,
    })
}
