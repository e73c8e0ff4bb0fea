//! Gradients, RMSProp and weight clipping.

use indexmap::IndexMap;
use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::domain::ParameterSet;
use crate::error::{ensure_finite, Error, Result};

/// Gradient per trainable parameter, keyed and ordered like the paired set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    entries: IndexMap<String, ArrayD<f64>>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: ArrayD<f64>) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Elementwise sum of two gradient sets over the same keys.
    pub fn add(mut self, other: &GradientSet) -> Result<GradientSet> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::config("gradient sets have different keys"));
        }
        for (name, g) in self.entries.iter_mut() {
            let o = other
                .get(name)
                .ok_or_else(|| Error::config(format!("gradient {name:?} missing from summand")))?;
            if o.shape() != g.shape() {
                return Err(Error::config(format!("gradient {name:?} shape mismatch")));
            }
            *g += o;
        }
        Ok(self)
    }

    /// Keys must be exactly the trainable entries of `params`, shapes parallel.
    pub fn check_pairs_with(&self, params: &ParameterSet) -> Result<()> {
        let names = params.trainable_names();
        if names.len() != self.entries.len() {
            return Err(Error::config(format!(
                "gradient set has {} entries, parameter set {} trainable",
                self.entries.len(),
                names.len()
            )));
        }
        for name in names {
            let g = self
                .entries
                .get(name)
                .ok_or_else(|| Error::config(format!("no gradient for {name:?}")))?;
            if g.shape() != params.value(name)?.shape() {
                return Err(Error::config(format!("gradient shape mismatch for {name:?}")));
            }
        }
        Ok(())
    }
}

/// A scalar loss over one parameter set that knows its own gradient.
pub trait Objective {
    fn loss(&self, params: &ParameterSet) -> Result<f64>;

    fn loss_and_gradient(&self, params: &ParameterSet) -> Result<(f64, GradientSet)>;
}

/// Gradient of `objective` at `params`.
pub fn gradient_of(objective: &dyn Objective, params: &ParameterSet) -> Result<GradientSet> {
    let (loss, grads) = objective.loss_and_gradient(params)?;
    ensure_finite(loss, "loss")?;
    for (name, g) in grads.iter() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("gradient of {name:?} is not finite")));
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) || !(self.epsilon > 0.0) {
            return Err(Error::config("RMSProp decay must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

/// Running mean-square of past gradients, one accumulator per trainable entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: RmsPropConfig,
    accumulators: IndexMap<String, ArrayD<f64>>,
}

impl OptimizerState {
    pub fn new(config: RmsPropConfig) -> Self {
        Self {
            config,
            accumulators: IndexMap::new(),
        }
    }

    pub fn accumulator(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.accumulators.get(name)
    }
}

/// One RMSProp step: `acc = decay*acc + (1-decay)*g^2`,
/// `w -= lr * g / sqrt(acc + eps)`. Frozen entries are never touched.
pub fn rmsprop_step(params: &mut ParameterSet, grads: &GradientSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    grads.check_pairs_with(params)?;
    let RmsPropConfig { decay, epsilon } = state.config;
    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = grads.get(name).expect("checked above");
        let acc = state
            .accumulators
            .entry(name.to_string())
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        if acc.shape() != g.shape() {
            return Err(Error::config(format!("optimizer state shape mismatch for {name:?}")));
        }
        Zip::from(&mut p.value).and(acc).and(g).for_each(|w, a, &gv| {
            *a = decay * *a + (1.0 - decay) * gv * gv;
            *w -= lr * gv / (*a + epsilon).sqrt();
        });
    }
    Ok(())
}

/// `max(min(x, c), -c)`.
pub fn clip(x: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::rejected(format!("clip bound must be positive, got {c}")));
    }
    Ok(x.min(c).max(-c))
}

pub fn clip_array(x: &mut ArrayD<f64>, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::rejected(format!("clip bound must be positive, got {c}")));
    }
    x.mapv_inplace(|v| v.min(c).max(-c));
    Ok(())
}

/// Projects every trainable entry into `[-c, c]`.
pub fn clip_parameters(params: &mut ParameterSet, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::rejected(format!("clip bound must be positive, got {c}")));
    }
    for (_, p) in params.iter_mut() {
        if p.trainable {
            clip_array(&mut p.value, c)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;

    fn scalar_set(w: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", arr1(&[w]).into_dyn(), true).unwrap();
        p
    }

    fn grads_of(name: &str, v: &[f64]) -> GradientSet {
        let mut g = GradientSet::new();
        g.insert(name, arr1(v).into_dyn());
        g
    }

    #[test]
    fn rmsprop_scalar_hand_evaluation() {
        let mut p = scalar_set(1.0);
        let mut state = OptimizerState::new(RmsPropConfig::default());
        rmsprop_step(&mut p, &grads_of("w", &[1.0]), &mut state, 0.01).unwrap();
        let acc = state.accumulator("w").unwrap()[0];
        assert!((acc - 0.01).abs() < 1e-15);
        let expected = 1.0 - 0.01 / (0.01f64 + 1e-8).sqrt();
        assert!((p.value("w").unwrap()[0] - expected).abs() < 1e-15);
        assert!((p.value("w").unwrap()[0] - 0.9000).abs() < 1e-4);
    }

    #[test]
    fn rmsprop_zero_gradient_is_identity() {
        let mut p = scalar_set(0.3);
        let mut state = OptimizerState::new(RmsPropConfig::default());
        for _ in 0..5 {
            rmsprop_step(&mut p, &grads_of("w", &[0.0]), &mut state, 0.1).unwrap();
        }
        assert_eq!(p.value("w").unwrap()[0], 0.3);
    }

    #[test]
    fn rmsprop_leaves_frozen_entries() {
        let mut p = scalar_set(1.0);
        p.insert("frozen", arr1(&[2.0]).into_dyn(), false).unwrap();
        let mut state = OptimizerState::new(RmsPropConfig::default());
        rmsprop_step(&mut p, &grads_of("w", &[1.0]), &mut state, 0.1).unwrap();
        assert_eq!(p.value("frozen").unwrap()[0], 2.0);
        // a gradient targeting the frozen entry is a pairing error
        let mut bad = grads_of("w", &[1.0]);
        bad.insert("frozen", arr1(&[5.0]).into_dyn());
        assert!(rmsprop_step(&mut p, &bad, &mut state, 0.1).is_err());
        assert_eq!(p.value("frozen").unwrap()[0], 2.0);
    }

    #[test]
    fn rmsprop_shape_mismatch_rejected() {
        let mut p = scalar_set(1.0);
        let mut state = OptimizerState::new(RmsPropConfig::default());
        let err = rmsprop_step(&mut p, &grads_of("w", &[1.0, 2.0]), &mut state, 0.1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 0.01).unwrap(), 0.01);
        assert_eq!(clip(-3.0, 1.0).unwrap(), -1.0);
        assert_eq!(clip(0.005, 0.01).unwrap(), 0.005);
        assert!(clip(1.0, 0.0).is_err());
        assert!(clip(1.0, -1.0).is_err());
    }

    #[test]
    fn clip_parameters_mixed_signs() {
        let mut p = ParameterSet::new();
        p.insert("a", arr1(&[-5.0, 0.0, 5.0]).into_dyn(), true).unwrap();
        clip_parameters(&mut p, 2.0).unwrap();
        assert_eq!(p.value("a").unwrap().to_owned(), arr1(&[-2.0, 0.0, 2.0]).into_dyn());
    }

    #[test]
    fn clip_parameters_in_range_unchanged() {
        let mut p = ParameterSet::new();
        p.insert("a", arr1(&[-0.004, 0.0, 0.0099]).into_dyn(), true).unwrap();
        let before = p.clone();
        clip_parameters(&mut p, 0.01).unwrap();
        assert!(p.bit_identical(&before));
    }

    proptest! {
        #[test]
        fn clip_parameters_bounds_everything(values in proptest::collection::vec(-100.0f64..100.0, 1..50)) {
            let mut p = ParameterSet::new();
            p.insert("a", ndarray::Array1::from(values).into_dyn(), true).unwrap();
            clip_parameters(&mut p, 0.01).unwrap();
            prop_assert!(p.max_abs_trainable() <= 0.01);
        }

        #[test]
        fn zero_learning_rate_is_identity(w in -10.0f64..10.0, g in -10.0f64..10.0) {
            let mut p = scalar_set(w);
            let mut state = OptimizerState::new(RmsPropConfig::default());
            rmsprop_step(&mut p, &grads_of("w", &[g]), &mut state, 0.0).unwrap();
            prop_assert_eq!(p.value("w").unwrap()[0], w);
        }
    }
}
