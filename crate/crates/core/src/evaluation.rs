//! Accuracy metrics, normalized confusion matrices and the comparison table.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSplit;
use crate::domain::ParameterSet;
use crate::error::{Error, Result};
use crate::models::Models;
use crate::nn::Mode;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rows evaluated per forward pass.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// `counts[i][j]`: samples of true class `i` predicted as `j`.
    pub counts: Vec<Vec<usize>>,
    /// Row-normalised counts; rows without support are left at zero.
    pub normalized: Vec<Vec<f64>>,
    /// `supported[i]` is false when class `i` has no samples.
    pub supported: Vec<bool>,
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::rejected("prediction and label counts differ"));
        }
        let mut counts = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= num_classes || t >= num_classes {
                return Err(Error::rejected(format!("class index out of range for {num_classes} classes")));
            }
            counts[t][p] += 1;
        }
        let supported: Vec<bool> = counts.iter().map(|row| row.iter().sum::<usize>() > 0).collect();
        let normalized = counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect();
        Ok(Self {
            counts,
            normalized,
            supported,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// CSV with one line per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.normalized {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn normalized_array(&self) -> Array2<f64> {
        let k = self.num_classes();
        Array2::from_shape_fn((k, k), |(i, j)| self.normalized[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub micro_accuracy: f64,
    /// Mean diagonal of the normalised confusion over supported classes.
    pub macro_accuracy: f64,
    pub confusion: Confusion,
    pub samples: usize,
}

impl Evaluation {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::rejected("cannot evaluate an empty split"));
        }
        let confusion = Confusion::from_predictions(predicted, truth, num_classes)?;
        let correct: usize = (0..num_classes).map(|i| confusion.counts[i][i]).sum();
        let diag: Vec<f64> = (0..num_classes)
            .filter(|&i| confusion.supported[i])
            .map(|i| confusion.normalized[i][i])
            .collect();
        Ok(Self {
            micro_accuracy: correct as f64 / truth.len() as f64,
            macro_accuracy: diag.iter().sum::<f64>() / diag.len() as f64,
            confusion,
            samples: truth.len(),
        })
    }
}

/// Class predictions of `h(M(x))` in eval mode, ties toward the lowest index.
pub fn predict(models: &Models, m_params: &ParameterSet, h_params: &ParameterSet, split: &LabeledSplit) -> Result<Vec<usize>> {
    let x = split.features()?;
    let mut out = Vec::with_capacity(split.len());
    let rows: Vec<usize> = (0..split.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let z = models.extractor.forward(m_params, &x.select(chunk), Mode::Eval)?;
        out.extend(models.classifier.forward(h_params, &z)?.argmax());
    }
    Ok(out)
}

pub fn evaluate(models: &Models, m_params: &ParameterSet, h_params: &ParameterSet, split: &LabeledSplit) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::rejected("cannot evaluate an empty split"));
    }
    let predicted = predict(models, m_params, h_params, split)?;
    Evaluation::from_predictions(&predicted, split.labels(), split.num_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NonAdapted,
    AdaptedWgan,
    AdaptedGan,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NonAdapted => "non_adapted",
            ModelKind::AdaptedWgan => "adapted_wgan",
            ModelKind::AdaptedGan => "adapted_gan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub source: Evaluation,
    pub target: Evaluation,
}

/// Before/after values of one divergence estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeforeAfter {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceBlock {
    /// Which adapted model the "after" values refer to.
    pub model: ModelKind,
    /// Uncalibrated; only comparisons between values are meaningful.
    pub critic_wasserstein_estimate: BeforeAfter,
    /// Mean bound over threshold classifiers on random 1-D projections.
    pub hdh_bound_estimate: BeforeAfter,
    /// Bound for a fitted network domain classifier; saturates at 2 when
    /// the latents are separable.
    pub hdh_network_classifier: BeforeAfter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub models: Vec<ModelReport>,
    pub divergence: Vec<DivergenceBlock>,
    /// Effective configuration of the run.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(seed: u64, class_names: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            class_names,
            models: Vec::new(),
            divergence: Vec::new(),
            config,
        }
    }

    pub fn model(&self, kind: ModelKind) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == kind)
    }

    /// Inserts or replaces the entry for `report.model`, keeping a fixed order.
    pub fn set_model(&mut self, report: ModelReport) {
        self.models.retain(|m| m.model != report.model);
        self.models.push(report);
        self.models.sort_by_key(|m| m.model);
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport =
            serde_json::from_str(text).map_err(|e| Error::config(format!("malformed report: {e}")))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported report schema {}", report.schema_version)));
        }
        Ok(report)
    }
}

/// One row of the adapted-vs-non-adapted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub source_non_adapted: f64,
    pub target_non_adapted: f64,
    pub source_adapted: Option<f64>,
    pub target_adapted: Option<f64>,
}

impl ComparisonRow {
    pub fn source_delta(&self) -> Option<f64> {
        self.source_adapted.map(|a| a - self.source_non_adapted)
    }

    pub fn target_delta(&self) -> Option<f64> {
        self.target_adapted.map(|a| a - self.target_non_adapted)
    }
}

/// Rows for every adapted model in `report` (micro accuracy), or a single
/// non-adapted row when nothing has been adapted yet.
pub fn comparison_rows(report: &EvalReport) -> Result<Vec<ComparisonRow>> {
    let base = report
        .model(ModelKind::NonAdapted)
        .ok_or_else(|| Error::rejected("comparison needs a non-adapted report"))?;
    let adapted: Vec<&ModelReport> = report.models.iter().filter(|m| m.model != ModelKind::NonAdapted).collect();
    if adapted.is_empty() {
        return Ok(vec![ComparisonRow {
            method: ModelKind::NonAdapted.as_str().into(),
            source_non_adapted: base.source.micro_accuracy,
            target_non_adapted: base.target.micro_accuracy,
            source_adapted: None,
            target_adapted: None,
        }]);
    }
    Ok(adapted
        .into_iter()
        .map(|m| ComparisonRow {
            method: m.model.as_str().into(),
            source_non_adapted: base.source.micro_accuracy,
            target_non_adapted: base.target.micro_accuracy,
            source_adapted: Some(m.source.micro_accuracy),
            target_adapted: Some(m.target.micro_accuracy),
        })
        .collect())
}

fn cell(v: Option<f64>, signed: bool) -> String {
    match v {
        Some(v) if signed => format!("{v:+.2}"),
        Some(v) => format!("{v:.2}"),
        None => "-".into(),
    }
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).chain([6]).max().unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} | D_S non | D_T non | D_S ad | D_T ad | dD_S  | dD_T",
        "method"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:<7} | {:<7} | {:<6} | {:<6} | {:<5} | {}",
            r.method,
            cell(Some(r.source_non_adapted), false),
            cell(Some(r.target_non_adapted), false),
            cell(r.source_adapted, false),
            cell(r.target_adapted, false),
            cell(r.source_delta(), true),
            cell(r.target_delta(), true),
        );
    }
    out
}
