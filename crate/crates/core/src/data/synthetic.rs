//! Synthetic acoustic-scene-like data with a fixed recording-device shift.
//!
//! Every class owns a smooth spectro-temporal template. Source samples are
//! the template plus noise; target samples additionally pass through one
//! class-independent device transform: a smooth per-mel-band gain curve, a
//! constant offset and extra noise, all scaled by `gain_curve_severity`.

use std::f64::consts::TAU;

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSplit, SourceSplits, TargetSplit, TargetSplits, SCENE_LABELS};
use crate::domain::FeatureTensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Values are clamped into this range.
pub const DYNAMIC_RANGE: f64 = 10.0;

/// Fractions of each class assigned to train / valid; the rest is test.
const SOURCE_FRACTIONS: (f64, f64) = (0.6, 0.2);
const TARGET_FRACTIONS: (f64, f64) = (0.5, 0.1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    pub num_classes: usize,
    pub mel_bands: usize,
    pub time_frames: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    pub gain_curve_severity: f64,
    pub noise_std: f64,
    pub offset: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            mel_bands: 64,
            time_frames: 64,
            samples_per_class_source: 200,
            samples_per_class_target: 40,
            gain_curve_severity: 1.0,
            noise_std: 0.3,
            offset: 0.5,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.mel_bands == 0 || self.time_frames == 0 {
            return Err(Error::config("num_classes, mel_bands and time_frames must be positive"));
        }
        if self.samples_per_class_source < 3 || self.samples_per_class_target < 3 {
            return Err(Error::config("need at least 3 samples per class and domain to fill every split"));
        }
        if !(self.gain_curve_severity >= 0.0) || !(self.noise_std >= 0.0) || !self.offset.is_finite() {
            return Err(Error::config("severity and noise_std must be non-negative, offset finite"));
        }
        Ok(())
    }
}

struct Bump {
    amplitude: f64,
    centre: f64,
    width: f64,
    freq: f64,
    phase: f64,
}

fn class_template<R: Rng>(rng: &mut R, time: usize, mel: usize) -> Array2<f64> {
    let bumps: Vec<Bump> = (0..3)
        .map(|_| Bump {
            amplitude: rng.random_range(1.0..2.5),
            centre: rng.random_range(0.0..mel as f64),
            width: rng.random_range(2.0..6.0) * mel as f64 / 64.0,
            freq: rng.random_range(0.5..3.0),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    Array2::from_shape_fn((time, mel), |(t, m)| {
        bumps
            .iter()
            .map(|b| {
                let d = (m as f64 - b.centre) / b.width;
                let envelope = (-0.5 * d * d).exp();
                let modulation = 0.6 + 0.4 * (TAU * b.freq * t as f64 / time as f64 + b.phase).cos();
                b.amplitude * envelope * modulation
            })
            .sum::<f64>()
            - 1.0
    })
}

/// Smooth log-gain curve over mel bands in roughly [-2, 2].
fn device_log_gain<R: Rng>(rng: &mut R, mel: usize) -> Vec<f64> {
    let f1 = rng.random_range(0.5..1.5);
    let f2 = rng.random_range(1.5..3.0);
    let p1 = rng.random_range(0.0..TAU);
    let p2 = rng.random_range(0.0..TAU);
    (0..mel)
        .map(|m| {
            let u = m as f64 / mel as f64;
            1.2 * (TAU * f1 * u + p1).sin() + 0.8 * (TAU * f2 * u + p2).sin()
        })
        .collect()
}

fn f32_round(v: f64) -> f64 {
    v.clamp(-DYNAMIC_RANGE, DYNAMIC_RANGE) as f32 as f64
}

struct Generated {
    data: Vec<f64>,
    labels: Vec<usize>,
}

/// Draws `per_class` samples per class. Samples are rounded to `f32`
/// precision so in-memory and on-disk datasets agree bit for bit.
fn draw_domain<R: Rng>(
    rng: &mut R,
    templates: &[Array2<f64>],
    per_class: usize,
    device: Option<(&[f64], f64, f64)>,
    noise: &Normal<f64>,
) -> Generated {
    let (time, mel) = templates[0].dim();
    let mut data = Vec::with_capacity(templates.len() * per_class * time * mel);
    let mut labels = Vec::with_capacity(templates.len() * per_class);
    for (k, template) in templates.iter().enumerate() {
        for _ in 0..per_class {
            let level = rng.random_range(0.85..1.15);
            let roll = rng.random_range(0..time);
            for t in 0..time {
                let tt = (t + roll) % time;
                for m in 0..mel {
                    let mut v = level * template[[tt, m]] + noise.sample(rng);
                    if let Some((log_gain, offset, extra)) = device {
                        v = v * log_gain[m].exp() + offset + extra * noise.sample(rng);
                    }
                    data.push(f32_round(v));
                }
            }
            labels.push(k);
        }
    }
    Generated { data, labels }
}

/// Splits per-class contiguous blocks into train / valid / test index lists.
fn split_indices(labels: &[usize], num_classes: usize, fractions: (f64, f64)) -> [Vec<usize>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for k in 0..num_classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        let n = rows.len();
        let n_train = ((n as f64 * fractions.0).round() as usize).clamp(1, n - 2);
        let n_valid = ((n as f64 * fractions.1).round() as usize).clamp(1, n - n_train - 1);
        out[0].extend_from_slice(&rows[..n_train]);
        out[1].extend_from_slice(&rows[n_train..n_train + n_valid]);
        out[2].extend_from_slice(&rows[n_train + n_valid..]);
    }
    out
}

fn to_tensor(g: &Generated, time: usize, mel: usize) -> Result<FeatureTensor> {
    let arr = Array4::from_shape_vec((g.labels.len(), 1, time, mel), g.data.clone())
        .map_err(|e| Error::config(e.to_string()))?;
    FeatureTensor::new(arr)
}

pub fn generate_synthetic(config: &ShiftConfig) -> Result<Dataset> {
    config.validate()?;
    let (time, mel, k) = (config.time_frames, config.mel_bands, config.num_classes);
    let mut template_rng = stream_rng(config.seed, Stream::Data, 0);
    let templates: Vec<Array2<f64>> = (0..k).map(|_| class_template(&mut template_rng, time, mel)).collect();
    let log_gain: Vec<f64> = device_log_gain(&mut template_rng, mel)
        .into_iter()
        .map(|g| g * config.gain_curve_severity)
        .collect();
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::config(e.to_string()))?;

    let mut source_rng = stream_rng(config.seed, Stream::Data, 1);
    let source = draw_domain(&mut source_rng, &templates, config.samples_per_class_source, None, &noise);
    let mut target_rng = stream_rng(config.seed, Stream::Data, 2);
    let device = (
        log_gain.as_slice(),
        config.gain_curve_severity * config.offset,
        0.5 * config.gain_curve_severity,
    );
    let target = draw_domain(&mut target_rng, &templates, config.samples_per_class_target, Some(device), &noise);

    let source_x = to_tensor(&source, time, mel)?;
    let target_x = to_tensor(&target, time, mel)?;
    let [s_tr, s_va, s_te] = split_indices(&source.labels, k, SOURCE_FRACTIONS);
    let [t_tr, t_va, t_te] = split_indices(&target.labels, k, TARGET_FRACTIONS);
    let pick = |rows: &[usize], labels: &[usize]| rows.iter().map(|&r| labels[r]).collect::<Vec<_>>();

    let class_names = (0..k)
        .map(|i| SCENE_LABELS.get(i).map_or_else(|| format!("class {i}"), |s| s.to_string()))
        .collect();
    Ok(Dataset {
        class_names,
        time_frames: time,
        mel_bands: mel,
        source: SourceSplits {
            train: LabeledSplit::new(source_x.select(&s_tr), pick(&s_tr, &source.labels), k)?,
            valid: LabeledSplit::new(source_x.select(&s_va), pick(&s_va, &source.labels), k)?,
            test: LabeledSplit::new(source_x.select(&s_te), pick(&s_te, &source.labels), k)?,
        },
        target: TargetSplits {
            train: TargetSplit::new(target_x.select(&t_tr), pick(&t_tr, &target.labels), k)?,
            valid: TargetSplit::new(target_x.select(&t_va), pick(&t_va, &target.labels), k)?,
            test: TargetSplit::new(target_x.select(&t_te), pick(&t_te, &target.labels), k)?,
        },
    })
}
