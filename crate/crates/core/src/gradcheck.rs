//! Central finite differences, used as an independent check on the
//! hand-written backward passes. Only [`Objective::loss`] is evaluated here.

use crate::domain::ParameterSet;
use crate::error::{ensure_finite, Result};
use crate::optim::{gradient_of, GradientSet, Objective};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor for the relative error of near-zero gradient entries.
pub const RELATIVE_FLOOR: f64 = 1e-7;

/// Numerical gradient of every trainable entry by `(f(w+h) - f(w-h)) / 2h`.
pub fn numerical_gradient(objective: &dyn Objective, params: &ParameterSet, step: f64) -> Result<GradientSet> {
    let mut probe = params.clone();
    let mut out = GradientSet::new();
    for name in params.trainable_names() {
        let len = params.value(name)?.len();
        let mut grad = params.value(name)?.clone();
        for i in 0..len {
            let orig = *probe.value(name)?.iter().nth(i).expect("in range");
            set_flat(&mut probe, name, i, orig + step)?;
            let plus = ensure_finite(objective.loss(&probe)?, "loss")?;
            set_flat(&mut probe, name, i, orig - step)?;
            let minus = ensure_finite(objective.loss(&probe)?, "loss")?;
            set_flat(&mut probe, name, i, orig)?;
            *grad.iter_mut().nth(i).expect("in range") = (plus - minus) / (2.0 * step);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

fn set_flat(params: &mut ParameterSet, name: &str, i: usize, v: f64) -> Result<()> {
    *params.value_mut(name)?.iter_mut().nth(i).expect("in range") = v;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_entry: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares analytic and numerical gradients elementwise with
/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn check_gradient(objective: &dyn Objective, params: &ParameterSet, step: f64) -> Result<GradCheckReport> {
    let analytic = gradient_of(objective, params)?;
    analytic.check_pairs_with(params)?;
    let numeric = numerical_gradient(objective, params, step)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_entry: None,
        checked: 0,
    };
    for (name, a) in analytic.iter() {
        let n = numeric.get(name).expect("same keys");
        for (i, (&av, &nv)) in a.iter().zip(n.iter()).enumerate() {
            let denom = av.abs().max(nv.abs()).max(RELATIVE_FLOOR);
            let rel = (av - nv).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_entry = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}
