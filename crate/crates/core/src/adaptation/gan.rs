//! Sigmoid-discriminator arm with the non-saturating generator loss. No clipping.

use ndarray::Array1;

use super::{critic_loss_and_grad, generator_loss_and_grad, run_adaptation, AdaptInputs, AdaptOutcome, GeneratorLoss, LabeledBatch, Method};
use crate::domain::{AdaptConfig, FeatureTensor, ParameterSet};
use crate::error::{Error, Result};
use crate::models::Models;
use crate::nn::Mode;

/// Sigmoid outputs are clamped into `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]`.
pub const SIGMOID_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamped sigmoid and whether the clamp was inactive.
fn clamped(x: f64) -> (f64, bool) {
    let s = sigmoid(x);
    let c = s.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
    (c, c == s)
}

/// `-[mean log s(ss) + mean log(1 - s(st))]`.
pub(super) fn discriminator_scores_loss(ss: &Array1<f64>, st: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let m = ss.len() as f64;
    let mut loss = 0.0;
    let gs = ss.mapv(|x| {
        let (s, free) = clamped(x);
        loss -= s.ln() / m;
        if free {
            -(1.0 - s) / m
        } else {
            0.0
        }
    });
    let gt = st.mapv(|x| {
        let (s, free) = clamped(x);
        loss -= (1.0 - s).ln() / m;
        if free {
            s / m
        } else {
            0.0
        }
    });
    (loss, gs, gt)
}

/// `-mean log s(st)`.
pub(super) fn generator_scores_term(st: &Array1<f64>) -> (f64, Array1<f64>) {
    let m = st.len() as f64;
    let mut term = 0.0;
    let g = st.mapv(|x| {
        let (s, free) = clamped(x);
        term -= s.ln() / m;
        if free {
            -(1.0 - s) / m
        } else {
            0.0
        }
    });
    (term, g)
}

/// Negated discriminator log-likelihood; source is the positive class.
pub fn gan_discriminator_loss(
    models: &Models,
    hd: &ParameterSet,
    ms: &ParameterSet,
    mt: &ParameterSet,
    xs: &FeatureTensor,
    xt: &FeatureTensor,
    mt_mode: Mode,
) -> Result<f64> {
    if xs.batch() != xt.batch() {
        return Err(Error::rejected("source and target batches must have the same size"));
    }
    let zs = models.extractor.forward(ms, xs, Mode::Eval)?;
    let zt = models.extractor.forward(mt, xt, mt_mode)?;
    Ok(critic_loss_and_grad(Method::Gan, &models.critic, hd, &zs, &zt, false)?.0)
}

/// `-mean log s(h_d(M_T(xt)))` plus the mean source cross-entropy under `h*`.
#[allow(clippy::too_many_arguments)]
pub fn gan_generator_loss(
    models: &Models,
    hd: &ParameterSet,
    mt: &ParameterSet,
    h_star: &ParameterSet,
    xt: &FeatureTensor,
    src: LabeledBatch<'_>,
    mt_mode: Mode,
) -> Result<GeneratorLoss> {
    Ok(generator_loss_and_grad(Method::Gan, models, hd, mt, h_star, xt, src, mt_mode, false)?.0)
}

pub fn adapt_gan(inputs: AdaptInputs<'_>, config: &AdaptConfig) -> Result<AdaptOutcome> {
    run_adaptation(Method::Gan, inputs, config, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn zero_scores_give_two_ln_two() {
        let z = arr1(&[0.0, 0.0, 0.0]);
        let (l, gs, gt) = discriminator_scores_loss(&z, &z);
        assert!((l - 1.386294).abs() < 1e-6);
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(gs.iter().all(|&g| (g + 0.5 / 3.0).abs() < 1e-15));
        assert!(gt.iter().all(|&g| (g - 0.5 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn perfect_discriminator_tends_to_zero() {
        let (l, _, _) = discriminator_scores_loss(&arr1(&[25.0]), &arr1(&[-25.0]));
        assert!(l < 1e-10);
    }

    #[test]
    fn saturated_generator_term_vanishes() {
        let (t, _) = generator_scores_term(&arr1(&[50.0, 60.0]));
        assert!(t.abs() < 1e-12);
        let (t0, _) = generator_scores_term(&arr1(&[0.0]));
        assert!((t0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        let (l, gs, gt) = discriminator_scores_loss(&arr1(&[-800.0]), &arr1(&[800.0]));
        assert!(l.is_finite());
        assert!((l + 2.0 * SIGMOID_CLAMP.ln()).abs() < 1e-3);
        assert_eq!((gs[0], gt[0]), (0.0, 0.0));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
