//! Wasserstein arm: linear critic losses and weight clipping.

use ndarray::Array1;

use super::{critic_loss_and_grad, generator_loss_and_grad, run_adaptation, AdaptInputs, AdaptOutcome, GeneratorLoss, LabeledBatch, Method};
use crate::domain::{AdaptConfig, FeatureTensor, ParameterSet};
use crate::error::{Error, Result};
use crate::models::Models;
use crate::nn::Mode;

/// `mean(ss) - mean(st)` with gradients `+1/m` and `-1/m`.
pub(super) fn critic_scores_loss(ss: &Array1<f64>, st: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let m = ss.len() as f64;
    let loss = ss.sum() / m - st.sum() / m;
    (loss, Array1::from_elem(ss.len(), 1.0 / m), Array1::from_elem(st.len(), -1.0 / m))
}

pub(super) fn generator_scores_term(st: &Array1<f64>) -> (f64, Array1<f64>) {
    let m = st.len() as f64;
    (st.sum() / m, Array1::from_elem(st.len(), 1.0 / m))
}

/// `(1/m) sum h_d(M_S(xs)) - (1/m) sum h_d(M_T(xt))`.
///
/// `M_S` runs in eval mode, `M_T` in `mt_mode`.
pub fn critic_loss(
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
    Ok(critic_loss_and_grad(Method::Wgan, &models.critic, hd, &zs, &zt, false)?.0)
}

/// Mean critic score of `M_T(xt)` plus the mean source cross-entropy under `h*`.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    models: &Models,
    hd: &ParameterSet,
    mt: &ParameterSet,
    h_star: &ParameterSet,
    xt: &FeatureTensor,
    src: LabeledBatch<'_>,
    mt_mode: Mode,
) -> Result<GeneratorLoss> {
    Ok(generator_loss_and_grad(Method::Wgan, models, hd, mt, h_star, xt, src, mt_mode, false)?.0)
}

pub fn adapt(inputs: AdaptInputs<'_>, config: &AdaptConfig) -> Result<AdaptOutcome> {
    run_adaptation(Method::Wgan, inputs, config, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn single_sample_scores() {
        let (l, gs, gt) = critic_scores_loss(&arr1(&[2.0]), &arr1(&[0.5]));
        assert_eq!(l, 1.5);
        assert_eq!(gs[0], 1.0);
        assert_eq!(gt[0], -1.0);
    }

    #[test]
    fn constant_critic_gives_zero() {
        let k = arr1(&[0.7, 0.7, 0.7]);
        assert_eq!(critic_scores_loss(&k, &k).0, 0.0);
    }

    #[test]
    fn generator_term_is_mean() {
        let (t, g) = generator_scores_term(&arr1(&[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(t, 1.0);
        assert!(g.iter().all(|&v| v == 0.25));
    }
}
