//! Manifest CSV and UDAW feature files.
//!
//! Feature file layout (all integers little-endian):
//!
//! ```text
//! "UDAW" | version: u32 | rank: u32 | dims: rank x u32 | payload: f32 x prod(dims), row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use super::{Dataset, Device, LabeledSplit, SourceSplits, SplitKind, TargetSplit, TargetSplits};
use crate::domain::FeatureTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UDAW";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub scene_label: String,
    pub device: Device,
    pub split: SplitKind,
}

/// Writes one sample (`[time, mel]`) as a rank-3 `[1, time, mel]` file.
pub fn write_feature_file(path: &Path, sample: &FeatureTensor) -> Result<()> {
    if sample.batch() != 1 {
        return Err(Error::rejected("feature files hold exactly one sample"));
    }
    let dims = [1u32, sample.time_frames() as u32, sample.mel_bands() as u32];
    let mut buf = Vec::with_capacity(20 + 4 * sample.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FEATURE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in sample.data().iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ingestion(self.path, "file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads a UDAW feature file into a one-sample `[1, 1, time, mel]` tensor.
///
/// Accepts `[time, mel]`, `[1, time, mel]` and `[1, 1, time, mel]` payloads.
pub fn read_feature_file(path: &Path) -> Result<FeatureTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::ingestion(path, "bad magic bytes, expected UDAW"));
    }
    let version = r.u32()?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(Error::ingestion(path, format!("unsupported format version {version}")));
    }
    let rank = r.u32()? as usize;
    if !(2..=4).contains(&rank) {
        return Err(Error::ingestion(path, format!("unsupported rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
    if dims[..rank - 2].iter().any(|&d| d != 1) {
        return Err(Error::ingestion(path, format!("leading dims must be 1, got {dims:?}")));
    }
    let (time, mel) = (dims[rank - 2], dims[rank - 1]);
    let n = time * mel;
    let payload = r.take(4 * n)?.to_vec();
    if r.pos != bytes.len() {
        return Err(Error::ingestion(path, "trailing bytes after payload"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let arr = Array4::from_shape_vec((1, 1, time, mel), values).map_err(|e| Error::ingestion(path, e.to_string()))?;
    FeatureTensor::new(arr).map_err(|e| Error::ingestion(path, e.to_string()))
}

/// Writes `manifest.csv` plus one feature file per sample under `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::new();
    let mut emit = |split: &LabeledSplit, device: Device, kind: SplitKind| -> Result<()> {
        if split.is_empty() {
            return Ok(());
        }
        let x = split.features()?;
        for (i, &label) in split.labels().iter().enumerate() {
            let rel = format!("features/{:?}_{}_{:05}.udaw", device, kind.as_str(), i);
            write_feature_file(&dir.join(&rel), &x.select(&[i]))?;
            entries.push(ManifestEntry {
                path: rel,
                scene_label: dataset.class_names[label].clone(),
                device,
                split: kind,
            });
        }
        Ok(())
    };
    let s = &dataset.source;
    for (split, kind) in [(&s.train, SplitKind::Train), (&s.valid, SplitKind::Valid), (&s.test, SplitKind::Test)] {
        emit(split, Device::A, kind)?;
    }
    let t = &dataset.target;
    for (split, kind) in [(&t.train, SplitKind::Train), (&t.valid, SplitKind::Valid), (&t.test, SplitKind::Test)] {
        emit(split.for_evaluation(), Device::B, kind)?;
    }
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_err(&manifest, e))?;
    for e in &entries {
        w.serialize(e).map_err(|e| csv_err(&manifest, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    let classes = dir.join("classes.txt");
    let mut f = fs::File::create(&classes).map_err(|e| Error::io(&classes, e))?;
    for name in &dataset.class_names {
        writeln!(f, "{name}").map_err(|e| Error::io(&classes, e))?;
    }
    Ok(manifest)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::ingestion(path, e.to_string())
}

/// Reads a manifest and every referenced feature file.
///
/// Class indices follow `class_names` order. Device A rows become the source
/// splits, B and C rows the target splits. Any bad row aborts ingestion.
pub fn load_manifest(manifest: &Path, class_names: &[String]) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| csv_err(manifest, e))?;
    let headers = reader.headers().map_err(|e| csv_err(manifest, e))?.clone();
    let expected = ["path", "scene_label", "device", "split"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::ingestion(
            manifest,
            format!("header must be {expected:?}, got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    let k = class_names.len();
    let mut groups: BTreeMap<(bool, SplitKind), (Vec<FeatureTensor>, Vec<usize>)> = BTreeMap::new();
    let mut shape: Option<(usize, usize)> = None;
    for (row, record) in reader.deserialize::<ManifestEntry>().enumerate() {
        let line = row + 2;
        let entry = record.map_err(|e| Error::ingestion(manifest, format!("row {line}: {e}")))?;
        let label = class_names
            .iter()
            .position(|c| *c == entry.scene_label)
            .ok_or_else(|| Error::ingestion(manifest, format!("row {line}: unknown scene label {:?}", entry.scene_label)))?;
        let x = read_feature_file(&base.join(&entry.path))?;
        let dims = (x.time_frames(), x.mel_bands());
        match shape {
            None => shape = Some(dims),
            Some(s) if s != dims => {
                return Err(Error::ingestion(
                    base.join(&entry.path),
                    format!("shape {dims:?} differs from earlier rows {s:?}"),
                ))
            }
            _ => {}
        }
        let is_target = entry.device.domain() == crate::domain::DomainTag::Target;
        let slot = groups.entry((is_target, entry.split)).or_default();
        slot.0.push(x);
        slot.1.push(label);
    }
    let (time_frames, mel_bands) = shape.ok_or_else(|| Error::ingestion(manifest, "manifest has no rows"))?;
    let mut take = |target: bool, kind: SplitKind| -> Result<Option<(FeatureTensor, Vec<usize>)>> {
        match groups.remove(&(target, kind)) {
            None => Ok(None),
            Some((xs, labels)) => {
                let views: Vec<_> = xs.iter().map(|x| x.data().view()).collect();
                let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ingestion(manifest, e.to_string()))?;
                Ok(Some((FeatureTensor::new(data)?, labels)))
            }
        }
    };
    let mut source = Vec::new();
    let mut target = Vec::new();
    for kind in SplitKind::ALL {
        source.push(match take(false, kind)? {
            Some((x, y)) => LabeledSplit::new(x, y, k)?,
            None => LabeledSplit::empty(k),
        });
        target.push(match take(true, kind)? {
            Some((x, y)) => TargetSplit::new(x, y, k)?,
            None => TargetSplit::empty(k),
        });
    }
    let mut source = source.into_iter();
    let mut target = target.into_iter();
    Ok(Dataset {
        class_names: class_names.to_vec(),
        time_frames,
        mel_bands,
        source: SourceSplits {
            train: source.next().expect("three splits"),
            valid: source.next().expect("three splits"),
            test: source.next().expect("three splits"),
        },
        target: TargetSplits {
            train: target.next().expect("three splits"),
            valid: target.next().expect("three splits"),
            test: target.next().expect("three splits"),
        },
    })
}

/// Reads `classes.txt` (one class name per line) next to a manifest, falling
/// back to the ten scene labels.
pub fn class_names_for(manifest: &Path) -> Result<Vec<String>> {
    let path = manifest.parent().unwrap_or(Path::new(".")).join("classes.txt");
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    } else {
        Ok(super::SCENE_LABELS.iter().map(|s| s.to_string()).collect())
    }
}
