//! Datasets: labeled source splits, label-hiding target splits, the synthetic
//! device-shift generator and file ingestion.

mod files;
mod synthetic;

pub use files::{class_names_for, load_manifest, read_feature_file, write_dataset, write_feature_file, ManifestEntry, FEATURE_FORMAT_VERSION};
pub use synthetic::{generate_synthetic, ShiftConfig};

use serde::{Deserialize, Serialize};

use crate::domain::{FeatureTensor, LabelVector};
use crate::error::{Error, Result};

pub const SCENE_LABELS: [&str; 10] = [
    "airport",
    "bus",
    "metro",
    "metro station",
    "park",
    "public square",
    "shopping mall",
    "street pedestrian",
    "street traffic",
    "tram",
];

/// Recording device; A is the source domain, B and C the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    A,
    B,
    C,
}

impl Device {
    pub fn domain(self) -> crate::domain::DomainTag {
        match self {
            Device::A => crate::domain::DomainTag::Source,
            Device::B | Device::C => crate::domain::DomainTag::Target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Valid, SplitKind::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

/// Features with visible class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    features: Option<FeatureTensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledSplit {
    pub fn new(features: FeatureTensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.batch() != labels.len() {
            return Err(Error::rejected(format!(
                "{} feature rows but {} labels",
                features.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&k| k >= num_classes) {
            return Err(Error::rejected(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            features: Some(features),
            labels,
            num_classes,
        })
    }

    /// A split holding no samples.
    pub fn empty(num_classes: usize) -> Self {
        Self {
            features: None,
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> Result<&FeatureTensor> {
        self.features.as_ref().ok_or_else(|| Error::rejected("split is empty"))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features and one-hot targets of the given rows.
    pub fn batch(&self, rows: &[usize]) -> Result<(FeatureTensor, LabelVector)> {
        let x = self.features()?.select(rows);
        let picked: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        Ok((x, LabelVector::from_indices(&picked, self.num_classes)?))
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &k in &self.labels {
            counts[k] += 1;
        }
        counts
    }
}

/// Target-domain features as seen by adaptation: there is no label accessor.
///
/// ```compile_fail
/// # fn peek(split: &wda::data::UnlabeledSplit) {
/// let _ = split.labels();
/// # }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSplit {
    features: Option<FeatureTensor>,
}

impl UnlabeledSplit {
    pub fn new(features: FeatureTensor) -> Self {
        Self {
            features: Some(features),
        }
    }

    pub fn empty() -> Self {
        Self { features: None }
    }

    pub fn len(&self) -> usize {
        self.features.as_ref().map_or(0, FeatureTensor::batch)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> Result<&FeatureTensor> {
        self.features.as_ref().ok_or_else(|| Error::rejected("split is empty"))
    }

    pub fn batch(&self, rows: &[usize]) -> Result<FeatureTensor> {
        Ok(self.features()?.select(rows))
    }
}

/// Target-domain split whose labels are reserved for evaluation.
///
/// Adaptation receives [`TargetSplit::unlabeled`]; only
/// [`TargetSplit::for_evaluation`] exposes the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    inner: LabeledSplit,
}

impl TargetSplit {
    pub fn new(features: FeatureTensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Ok(Self {
            inner: LabeledSplit::new(features, labels, num_classes)?,
        })
    }

    pub fn empty(num_classes: usize) -> Self {
        Self {
            inner: LabeledSplit::empty(num_classes),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn unlabeled(&self) -> UnlabeledSplit {
        UnlabeledSplit {
            features: self.inner.features.clone(),
        }
    }

    pub fn for_evaluation(&self) -> &LabeledSplit {
        &self.inner
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplits {
    pub train: LabeledSplit,
    pub valid: LabeledSplit,
    pub test: LabeledSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplits {
    pub train: TargetSplit,
    pub valid: TargetSplit,
    pub test: TargetSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub time_frames: usize,
    pub mel_bands: usize,
    pub source: SourceSplits,
    pub target: TargetSplits,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn source_len(&self) -> usize {
        self.source.train.len() + self.source.valid.len() + self.source.test.len()
    }

    pub fn target_len(&self) -> usize {
        self.target.train.len() + self.target.valid.len() + self.target.test.len()
    }
}
