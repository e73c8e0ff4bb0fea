//! Adversarial adaptation of a target extractor `M_T` against a domain critic.
//!
//! Both arms share one harness: the same batch sampling, stopping rule and
//! history schema. They differ only in the critic / generator losses and in
//! whether the critic weights are clipped.

mod gan;
mod wgan;

pub use gan::{adapt_gan, gan_discriminator_loss, gan_generator_loss, sigmoid, SIGMOID_CLAMP};
pub use wgan::{adapt, critic_loss, generator_loss};

use ndarray::{concatenate, Array1, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSplit, UnlabeledSplit};
use crate::domain::{copy_parameters, AdaptConfig, FeatureTensor, LabelVector, LatentRep, ParameterSet, TargetBatchNorm};
use crate::error::{Error, Result};
use crate::models::{Critic, Models};
use crate::nn::{BatchStats, Mode};
use crate::optim::{clip_parameters, rmsprop_step, GradientSet, Objective, OptimizerState};
use crate::rng::{stream_rng, Stream};
use crate::source_training::{cross_entropy, cross_entropy_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wgan,
    Gan,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Wgan => "wgan",
            Method::Gan => "gan",
        }
    }

    /// Whether critic weights are projected into `[-c, c]` after each update.
    pub fn clips(self) -> bool {
        matches!(self, Method::Wgan)
    }

    /// Critic-side loss and its gradient w.r.t. the source and target scores.
    fn critic_objective(self, ss: &Array1<f64>, st: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
        match self {
            Method::Wgan => wgan::critic_scores_loss(ss, st),
            Method::Gan => gan::discriminator_scores_loss(ss, st),
        }
    }

    /// Adversarial part of the generator loss and its gradient w.r.t. target scores.
    fn generator_term(self, st: &Array1<f64>) -> (f64, Array1<f64>) {
        match self {
            Method::Wgan => wgan::generator_scores_term(st),
            Method::Gan => gan::generator_scores_term(st),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wgan" => Ok(Method::Wgan),
            "gan" => Ok(Method::Gan),
            other => Err(Error::config(format!("unknown adaptation method {other:?}"))),
        }
    }
}

/// Generator loss split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub total: f64,
    pub adversarial: f64,
    /// Mean cross-entropy of `h*(M_T(x_S))`.
    pub source_ce: f64,
}

pub(crate) fn mt_mode(config: &AdaptConfig) -> Mode {
    match config.target_batch_norm {
        TargetBatchNorm::Frozen => Mode::Eval,
        TargetBatchNorm::TargetBatch => Mode::Train,
    }
}

/// Critic loss on precomputed latents; with `want_grad`, also its gradient
/// w.r.t. the critic weights. Latents are constants here.
pub(crate) fn critic_loss_and_grad(
    method: Method,
    critic: &Critic,
    hd: &ParameterSet,
    zs: &LatentRep,
    zt: &LatentRep,
    want_grad: bool,
) -> Result<(f64, Option<GradientSet>)> {
    let m = zs.batch();
    if m == 0 || zt.batch() != m {
        return Err(Error::rejected(format!("critic batches must be equal and non-empty, got {m} and {}", zt.batch())));
    }
    let z = concatenate(Axis(0), &[zs.data().view(), zt.data().view()])
        .map_err(|e| Error::rejected(format!("latent widths differ: {e}")))?;
    let (scores, tape) = critic.forward_tape(hd, &LatentRep::new(z)?)?;
    let s = scores.data();
    let ss = s.slice(ndarray::s![..m]).to_owned();
    let st = s.slice(ndarray::s![m..]).to_owned();
    let (loss, gs, gt) = method.critic_objective(&ss, &st);
    if !want_grad {
        return Ok((loss, None));
    }
    let g = concatenate(Axis(0), &[gs.view(), gt.view()]).expect("1-d concat");
    let (grads, _) = critic.backward(hd, tape, &g, true)?;
    Ok((loss, Some(grads)))
}

/// Labeled source batch used by the source-preservation term.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub x: &'a FeatureTensor,
    pub y: &'a LabelVector,
}

/// Generator loss of `method` on `M_T`; with `want_grad`, also its gradient
/// w.r.t. the `M_T` weights. The critic and `h*` receive no gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn generator_loss_and_grad(
    method: Method,
    models: &Models,
    hd: &ParameterSet,
    mt: &ParameterSet,
    h_star: &ParameterSet,
    xt: &FeatureTensor,
    src: LabeledBatch<'_>,
    mode: Mode,
    want_grad: bool,
) -> Result<(GeneratorLoss, Option<GradientSet>, Vec<BatchStats>)> {
    let m = xt.batch();
    if m == 0 || src.x.batch() != m || src.y.batch() != m {
        return Err(Error::rejected(format!(
            "generator batches must be equal and non-empty, got {m} target and {} source",
            src.x.batch()
        )));
    }
    let (zt, t_tape) = models.extractor.forward_tape(mt, xt, mode)?;
    let stats = t_tape.batch_stats.clone();
    let (scores, c_tape) = models.critic.forward_tape(hd, &zt)?;
    let (adversarial, g_scores) = method.generator_term(scores.data());

    let (zs, s_tape) = models.extractor.forward_tape(mt, src.x, mode)?;
    let (post, h_tape) = models.classifier.forward_tape(h_star, &zs)?;
    let ce = cross_entropy(&post, src.y)?;
    let loss = GeneratorLoss {
        total: adversarial + ce.mean,
        adversarial,
        source_ce: ce.mean,
    };
    if !want_grad {
        return Ok((loss, None, stats));
    }
    let (_, dzt) = models.critic.backward(hd, c_tape, &g_scores, false)?;
    let grad_t = models.extractor.backward(mt, t_tape, dzt)?;
    let dpost = cross_entropy_grad(&post, src.y, 1.0 / m as f64);
    let (_, dzs) = models.classifier.backward(h_star, h_tape, &post, &dpost, false)?;
    let grad_s = models.extractor.backward(mt, s_tape, dzs)?;
    Ok((loss, Some(grad_t.add(&grad_s)?), stats))
}

/// Critic loss as a function of the critic weights, on fixed latents.
pub struct CriticObjective<'a> {
    pub method: Method,
    pub models: &'a Models,
    pub zs: &'a LatentRep,
    pub zt: &'a LatentRep,
}

impl Objective for CriticObjective<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(critic_loss_and_grad(self.method, &self.models.critic, params, self.zs, self.zt, false)?.0)
    }

    fn loss_and_gradient(&self, params: &ParameterSet) -> Result<(f64, GradientSet)> {
        let (l, g) = critic_loss_and_grad(self.method, &self.models.critic, params, self.zs, self.zt, true)?;
        Ok((l, g.expect("requested")))
    }
}

/// Generator loss as a function of the `M_T` weights.
pub struct GeneratorObjective<'a> {
    pub method: Method,
    pub models: &'a Models,
    pub hd: &'a ParameterSet,
    pub h_star: &'a ParameterSet,
    pub xt: &'a FeatureTensor,
    pub src: LabeledBatch<'a>,
    pub mode: Mode,
}

impl GeneratorObjective<'_> {
    fn eval(&self, params: &ParameterSet, want_grad: bool) -> Result<(GeneratorLoss, Option<GradientSet>)> {
        let (l, g, _) = generator_loss_and_grad(
            self.method,
            self.models,
            self.hd,
            params,
            self.h_star,
            self.xt,
            self.src,
            self.mode,
            want_grad,
        )?;
        Ok((l, g))
    }
}

impl Objective for GeneratorObjective<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.eval(params, false)?.0.total)
    }

    fn loss_and_gradient(&self, params: &ParameterSet) -> Result<(f64, GradientSet)> {
        let (l, g) = self.eval(params, true)?;
        Ok((l.total, g.expect("requested")))
    }
}

/// Everything adaptation reads. The target split carries no labels.
#[derive(Debug, Clone, Copy)]
pub struct AdaptInputs<'a> {
    pub models: &'a Models,
    pub ms_params: &'a ParameterSet,
    pub h_star_params: &'a ParameterSet,
    pub source: &'a LabeledSplit,
    pub target: &'a UnlabeledSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptEpoch {
    pub epoch: usize,
    pub critic_loss_mean: f64,
    pub generator_loss_mean: f64,
    pub source_ce_mean: f64,
    /// Mean adversarial generator term; the stopping rule watches this.
    pub target_score_mean: f64,
    /// Moving average of `target_score_mean` once the window is full.
    pub moving_average: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Saturated,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptHistory {
    pub method: Method,
    pub config: AdaptConfig,
    pub steps_per_epoch: usize,
    pub epochs: Vec<AdaptEpoch>,
    pub critic_updates: usize,
    pub generator_updates: usize,
    pub clip_applications: usize,
    pub stop: StopReason,
    /// Hash of every sampled batch index in order.
    pub batch_digest: u64,
}

#[derive(Serialize)]
struct HistoryHeader<'a> {
    method: Method,
    config: &'a AdaptConfig,
    steps_per_epoch: usize,
}

#[derive(Serialize)]
struct HistoryFooter {
    critic_updates: usize,
    generator_updates: usize,
    clip_applications: usize,
    stop: StopReason,
    batch_digest: u64,
}

impl AdaptHistory {
    /// Header line with the effective config, one line per epoch, then totals.
    pub fn to_json_lines(&self) -> Result<String> {
        let enc = |v: serde_json::Result<String>| v.map_err(|e| Error::config(format!("cannot serialize history: {e}")));
        let mut out = enc(serde_json::to_string(&HistoryHeader {
            method: self.method,
            config: &self.config,
            steps_per_epoch: self.steps_per_epoch,
        }))?;
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&enc(serde_json::to_string(e))?);
            out.push('\n');
        }
        out.push_str(&enc(serde_json::to_string(&HistoryFooter {
            critic_updates: self.critic_updates,
            generator_updates: self.generator_updates,
            clip_applications: self.clip_applications,
            stop: self.stop,
            batch_digest: self.batch_digest,
        }))?);
        out.push('\n');
        Ok(out)
    }
}

/// State visible to an observer right after a critic update.
#[derive(Debug)]
pub struct CriticUpdate<'a> {
    pub epoch: usize,
    pub outer_step: usize,
    pub inner: usize,
    pub critic_params: &'a ParameterSet,
    /// Clip bound applied in this update, if any.
    pub clip_c: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub mt_params: ParameterSet,
    pub critic_params: ParameterSet,
    pub history: AdaptHistory,
}

/// Without-replacement sampler that reshuffles whenever it runs out, so a
/// split shorter than the other one is cycled.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub(crate) fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub(crate) fn next_batch(&mut self, m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            out.push(self.order[self.pos]);
            self.pos += 1;
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
        }
        out
    }
}

struct Digest(u64);

impl Digest {
    fn feed(&mut self, rows: &[usize]) {
        for &r in rows {
            for b in (r as u64).to_le_bytes() {
                self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }
}

/// `M(x)` for every row, in eval mode, chunked.
pub(crate) fn latents_of(models: &Models, params: &ParameterSet, x: &FeatureTensor) -> Result<LatentRep> {
    let rows: Vec<usize> = (0..x.batch()).collect();
    let mut parts = Vec::new();
    for chunk in rows.chunks(128) {
        parts.push(models.extractor.forward(params, &x.select(chunk), Mode::Eval)?.into_data());
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    LatentRep::new(concatenate(Axis(0), &views).map_err(|e| Error::config(e.to_string()))?)
}

fn non_finite(method: Method, what: &str, epoch: usize, step: usize, epochs: &[AdaptEpoch]) -> Error {
    let so_far = serde_json::to_string(epochs).unwrap_or_default();
    Error::numeric(format!(
        "{} adaptation: non-finite {what} at epoch {epoch}, outer step {step}; completed epochs: {so_far}",
        method.as_str()
    ))
}

/// Runs the shared loop for `method`, calling `observer` after every critic update.
pub fn run_adaptation(
    method: Method,
    inputs: AdaptInputs<'_>,
    config: &AdaptConfig,
    observer: &mut dyn FnMut(&CriticUpdate<'_>),
) -> Result<AdaptOutcome> {
    config.validate()?;
    let AdaptInputs {
        models,
        ms_params,
        h_star_params,
        source,
        target,
    } = inputs;
    if source.is_empty() || target.is_empty() {
        return Err(Error::rejected("adaptation needs non-empty source and target splits"));
    }
    models.extractor.network().check_params(ms_params)?;
    models.classifier.network().check_params(h_star_params)?;
    if source.num_classes() != models.classifier.num_classes() {
        return Err(Error::config("classifier width does not match the number of classes"));
    }
    let m = config.batch_size;
    let lr = config.learning_rate;
    let mode = mt_mode(config);
    let steps = config.steps_per_epoch.unwrap_or_else(|| target.len().div_ceil(m));

    let mut mt = copy_parameters(ms_params);
    let mut hd = models.critic.init_params(&mut stream_rng(config.seed, Stream::Init, 1))?;
    if method.clips() {
        clip_parameters(&mut hd, config.clip_c)?;
    }
    // M_S is frozen, so source latents are computed once.
    let zs_all = latents_of(models, ms_params, source.features()?)?;
    let target_x = target.features()?;
    let mut src = BatchSampler::new(source.len(), stream_rng(config.seed, Stream::Batching, 1));
    let mut tgt = BatchSampler::new(target.len(), stream_rng(config.seed, Stream::Batching, 2));
    let mut hd_opt = OptimizerState::new(config.optimizer);
    let mut mt_opt = OptimizerState::new(config.optimizer);
    let mut digest = Digest(0xcbf2_9ce4_8422_2325);

    let mut epochs: Vec<AdaptEpoch> = Vec::new();
    let mut terms: Vec<f64> = Vec::new();
    let (mut critic_updates, mut generator_updates, mut clip_applications) = (0, 0, 0);
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let (mut crit_sum, mut gen_sum, mut ce_sum, mut adv_sum) = (0.0, 0.0, 0.0, 0.0);
        for step in 0..steps {
            for inner in 0..config.n_d {
                let rs = src.next_batch(m);
                let rt = tgt.next_batch(m);
                digest.feed(&rs);
                digest.feed(&rt);
                let zs = zs_all.select(&rs);
                let zt = models.extractor.forward(&mt, &target_x.select(&rt), mode)?;
                let (loss, grads) = critic_loss_and_grad(method, &models.critic, &hd, &zs, &zt, true)?;
                if !loss.is_finite() {
                    return Err(non_finite(method, "critic loss", epoch, step, &epochs));
                }
                rmsprop_step(&mut hd, &grads.expect("requested"), &mut hd_opt, lr)?;
                let clip_c = if method.clips() {
                    clip_parameters(&mut hd, config.clip_c)?;
                    clip_applications += 1;
                    if hd.max_abs_trainable() > config.clip_c {
                        return Err(Error::numeric("critic weights escaped the clip range"));
                    }
                    Some(config.clip_c)
                } else {
                    None
                };
                critic_updates += 1;
                crit_sum += loss;
                observer(&CriticUpdate {
                    epoch,
                    outer_step: step,
                    inner,
                    critic_params: &hd,
                    clip_c,
                });
            }
            let rs = src.next_batch(m);
            let rt = tgt.next_batch(m);
            digest.feed(&rs);
            digest.feed(&rt);
            let (xs, ys) = source.batch(&rs)?;
            let xt = target_x.select(&rt);
            let (loss, grads, stats) = generator_loss_and_grad(
                method,
                models,
                &hd,
                &mt,
                h_star_params,
                &xt,
                LabeledBatch { x: &xs, y: &ys },
                mode,
                true,
            )?;
            if !loss.total.is_finite() {
                return Err(non_finite(method, "generator loss", epoch, step, &epochs));
            }
            rmsprop_step(&mut mt, &grads.expect("requested"), &mut mt_opt, lr)?;
            if mode == Mode::Train {
                models.extractor.network().update_running_stats(&mut mt, &stats)?;
            }
            generator_updates += 1;
            gen_sum += loss.total;
            ce_sum += loss.source_ce;
            adv_sum += loss.adversarial;
        }
        let n = steps as f64;
        let term = adv_sum / n;
        terms.push(term);
        let w = config.saturation_window;
        let window_mean = |end: usize| terms[end - w..end].iter().sum::<f64>() / w as f64;
        let moving_average = (terms.len() >= w).then(|| window_mean(terms.len()));
        epochs.push(AdaptEpoch {
            epoch,
            critic_loss_mean: crit_sum / (n * config.n_d as f64),
            generator_loss_mean: gen_sum / n,
            source_ce_mean: ce_sum / n,
            target_score_mean: term,
            moving_average,
        });
        if terms.len() > w && (window_mean(terms.len()) - window_mean(terms.len() - 1)).abs() < config.saturation_tol {
            stop = StopReason::Saturated;
            break;
        }
    }

    Ok(AdaptOutcome {
        mt_params: mt,
        critic_params: hd,
        history: AdaptHistory {
            method,
            config: config.clone(),
            steps_per_epoch: steps,
            epochs,
            critic_updates,
            generator_updates,
            clip_applications,
            stop,
            batch_digest: digest.0,
        },
    })
}
