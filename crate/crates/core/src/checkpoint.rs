//! Binary checkpoints for [`DenoiserParams`].
//!
//! Layout (all integers little-endian `u32`, parameters little-endian `f64`):
//!
//! ```text
//! "TFNET1" | data_dim | embed_dim | num_steps | activation | n_layers
//!          | (in, out) * n_layers | param_count (u64) | params
//! ```
//!
//! A JSON sidecar (`<path>.json`) records the architecture, its digest and
//! the training configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, ArchConfig, DenoiserParams};

pub const MAGIC: &[u8; 6] = b"TFNET1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub activation: Activation,
    pub arch_hash: String,
    pub param_count: usize,
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

pub fn encode(params: &DenoiserParams) -> Vec<u8> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(64 + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    for v in [
        arch.data_dim,
        arch.embed_dim,
        arch.num_steps,
        params.activation().tag() as usize,
        params.num_layers(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &(i, o) in params.layer_shapes() {
        out.extend_from_slice(&(i as u32).to_le_bytes());
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.param_count() as u64).to_le_bytes());
    for v in params.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let data_dim = r.u32()?;
    let embed_dim = r.u32()?;
    let num_steps = r.u32()?;
    let tag = r.u32()? as u32;
    let activation = Activation::from_tag(tag)
        .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
    let n_layers = r.u32()?;
    if n_layers == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        shapes.push((r.u32()?, r.u32()?));
    }
    let hidden_widths: Vec<usize> = shapes[..n_layers - 1].iter().map(|&(_, o)| o).collect();
    let arch = ArchConfig {
        data_dim,
        hidden_widths,
        embed_dim,
        num_steps,
    };
    if arch.layer_shapes() != shapes {
        return Err(Error::Format("layer shapes inconsistent with header".into()));
    }
    let count = r.u64()? as usize;
    if count != arch.param_count() {
        return Err(Error::Format(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let raw = r.take(count * 8)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = DenoiserParams::from_flat(arch, data).map_err(|e| Error::Format(e.to_string()))?;
    debug_assert_eq!(params.activation(), activation);
    Ok(params)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary checkpoint and its JSON sidecar.
pub fn save(path: &Path, params: &DenoiserParams, training: Option<serde_json::Value>) -> Result<()> {
    write_atomic(path, &encode(params))?;
    let meta = CheckpointMeta {
        arch: params.arch().clone(),
        activation: params.activation(),
        arch_hash: params.arch_hash(),
        param_count: params.param_count(),
        training,
    };
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DenoiserParams> {
    decode(&fs::read(path)?)
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    Ok(serde_json::from_slice(&fs::read(sidecar_path(path))?)?)
}

/// Write to a temporary sibling and rename over the destination.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bitwise() {
        let p = DenoiserParams::init(&ArchConfig::default(), 3).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..6], b"TFNET1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let p = DenoiserParams::init(&ArchConfig::default(), 3).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.tfnet");
        let p = DenoiserParams::init(&ArchConfig::default(), 5).unwrap();
        save(&path, &p, Some(serde_json::json!({"epochs": 3}))).unwrap();
        assert_eq!(load(&path).unwrap(), p);
        let meta = load_meta(&path).unwrap();
        assert_eq!(meta.arch_hash, p.arch_hash());
        assert_eq!(meta.param_count, p.param_count());
    }
}
