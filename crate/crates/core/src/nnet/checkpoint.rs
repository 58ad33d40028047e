//! Binary checkpoint format.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "DSUMCKPT"
//! version      u32
//! header_len   u32
//! header       header_len bytes of JSON (model config echo + metadata)
//! n_tensors    u32
//! per tensor:  name_len u32, name (UTF-8), ndim u32, dims (u32 each),
//!              data (f32 each, row-major)
//! checksum     32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::ModelConfig;
use super::tensor::{ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSUMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub rng_seed: u64,
    /// Free-form training metadata (strategy, vocabulary fingerprint, domains).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(header: &CheckpointHeader, params: &ParameterStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_values() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterStore<f32>)> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    if bytes.len() < 12 + 32 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut params = ParameterStore::new(header.rng_seed);
    let n = r.u32()?;
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor records".into()));
    }
    Ok((header, params))
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, params: &ParameterStore<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(header, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
