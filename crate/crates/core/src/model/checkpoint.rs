//! Versioned binary checkpoint: magic, format version, model config as
//! JSON, then every named parameter tensor with its shape.
//!
//! ```text
//! "HEXSTCKP" | u32 version | u64 len, config JSON | u32 count |
//!   count × (u32 len, name | u32 rank | rank × u64 dim | f64 values)
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{build_layout, ModelConfig, ModelParams};
use crate::error::{HexstError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HEXSTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(cfg).map_err(|e| HexstError::Input(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + json.len() + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let entries = params.layout.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &params.values[e.range()] {
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes and checks the tensors against the config's layout.
pub fn read_checkpoint(bytes: &[u8]) -> std::result::Result<(ModelConfig, ModelParams), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let len = r.u64()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| format!("config: {e}"))?;
    cfg.validate().map_err(|e| e.to_string())?;
    let layout = build_layout(&cfg);
    let count = r.u32()? as usize;
    if count != layout.entries().len() {
        return Err(format!("{count} tensors, config implies {}", layout.entries().len()));
    }
    let mut params = ModelParams::zeros(&layout);
    for e in layout.entries() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        if name != e.name {
            return Err(format!("expected tensor {}, found {name}", e.name));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if shape != e.shape {
            return Err(format!("tensor {name} has shape {shape:?}, expected {:?}", e.shape));
        }
        let data = r.take(e.len() * 8)?;
        for (slot, c) in params.values[e.range()].iter_mut().zip(data.chunks_exact(8)) {
            *slot = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let bytes = write_checkpoint(cfg, params)?;
    fs::write(path, bytes).map_err(|e| HexstError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| HexstError::io(path, e))?;
    read_checkpoint(&bytes).map_err(|m| HexstError::format(path, m))
}
