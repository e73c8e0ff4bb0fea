//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `UDAW`, version `u32`, tag `CKPT`, header
//! length `u32` + JSON header, entry count `u32`, then per entry: name length
//! `u32` + UTF-8 name, trainable `u8`, rank `u32`, dims `u32` each, `f64`
//! payload in row-major order.

use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::domain::ParameterSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"UDAW";
const TAG: &[u8; 4] = b"CKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `extractor`, `classifier` or `critic`.
    pub role: String,
    /// Arm that produced the weights, if any.
    pub method: Option<String>,
    /// Architecture the weights belong to.
    pub spec: serde_json::Value,
}

pub fn encode_checkpoint(header: &CheckpointHeader, params: &ParameterSet) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::config(format!("cannot encode header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(TAG);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(p.trainable));
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.as_standard_layout().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<(CheckpointHeader, ParameterSet), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic bytes".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    if r.take(4)? != TAG {
        return Err("not a checkpoint file".into());
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("bad header: {e}"))?;
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| "entry name is not UTF-8")?.to_string();
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(format!("bad trainable flag {b} for {name:?}")),
        };
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or("entry too large")?)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = ArrayD::from_shape_vec(dims, values).map_err(|e| e.to_string())?;
        params.insert(name, value, trainable).map_err(|e| e.to_string())?;
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after last entry".into());
    }
    Ok((header, params))
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(CheckpointHeader, ParameterSet)> {
    decode(bytes).map_err(|reason| Error::ingestion(origin, reason))
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &ParameterSet) -> Result<()> {
    let bytes = encode_checkpoint(header, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterSet)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
