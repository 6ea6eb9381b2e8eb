//! Feature cache: `sample_id,label,spec_hash,v0,v1,...` CSV with 17
//! significant digits, plus a JSON manifest next to it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureSpec, TimestepPlan, TrajectoryFeatureVector};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheManifest {
    pub spec_hash: String,
    pub plan: TimestepPlan,
    pub spec: FeatureSpec,
    pub schedule_digest: String,
    pub arch_hash: String,
    pub dim: usize,
    pub count: usize,
}

impl CacheManifest {
    /// Manifest describing `count` vectors produced by `ex`.
    pub fn for_extractor(ex: &super::FeatureExtractor<'_>, count: usize) -> Self {
        Self {
            spec_hash: ex.spec_hash().to_string(),
            plan: ex.plan().clone(),
            spec: ex.spec().clone(),
            schedule_digest: ex.schedule().digest(),
            arch_hash: ex.params().arch_hash(),
            dim: ex.dim(),
            count,
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn cache_write(path: &Path, vectors: &[TrajectoryFeatureVector], manifest: &CacheManifest) -> Result<()> {
    if vectors.len() != manifest.count {
        return Err(Error::Contract("manifest count does not match vectors".into()));
    }
    let mut out = String::from("sample_id,label,spec_hash");
    for i in 0..manifest.dim {
        write!(out, ",v{i}").unwrap();
    }
    out.push('\n');
    for v in vectors {
        if v.spec_hash != manifest.spec_hash {
            return Err(Error::Contract(format!(
                "vector {} has spec hash {}, manifest has {}",
                v.sample_id, v.spec_hash, manifest.spec_hash
            )));
        }
        if v.values.len() != manifest.dim {
            return Err(Error::Contract(format!("vector {} has wrong length", v.sample_id)));
        }
        if v.label.contains([',', '\n', '\r', '"']) {
            return Err(Error::Contract(format!("label {:?} cannot be stored", v.label)));
        }
        write!(out, "{},{},{}", v.sample_id, v.label, v.spec_hash).unwrap();
        for x in &v.values {
            write!(out, ",{x:.16e}").unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    write_atomic(&manifest_path(path), &serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

/// Reads a cache written by [`cache_write`]. `expected_hash` is the spec hash
/// of the requesting configuration.
pub fn cache_read(path: &Path, expected_hash: &str) -> Result<(CacheManifest, Vec<TrajectoryFeatureVector>)> {
    let manifest: CacheManifest = serde_json::from_slice(&fs::read(manifest_path(path))?)
        .map_err(|e| format_err(format!("manifest: {e}")))?;
    if manifest.spec_hash != expected_hash {
        return Err(Error::StaleCache {
            expected: expected_hash.to_string(),
            found: manifest.spec_hash,
        });
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err("missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[..3] != ["sample_id", "label", "spec_hash"] {
        return Err(format_err("unexpected header"));
    }
    let dim = cols.len() - 3;
    if dim != manifest.dim {
        return Err(format_err("header width disagrees with manifest"));
    }
    for (i, c) in cols[3..].iter().enumerate() {
        if *c != format!("v{i}") {
            return Err(format_err(format!("unexpected column {c}")));
        }
    }
    let mut vectors = Vec::with_capacity(manifest.count);
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(format_err(format!("row {n} has {} fields", fields.len())));
        }
        let sample_id = fields[0]
            .parse()
            .map_err(|_| format_err(format!("row {n}: bad sample id")))?;
        if fields[2] != expected_hash {
            return Err(Error::StaleCache {
                expected: expected_hash.to_string(),
                found: fields[2].to_string(),
            });
        }
        let values = fields[3..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| format_err(format!("row {n}: bad value")))?;
        vectors.push(TrajectoryFeatureVector {
            sample_id,
            label: fields[1].to_string(),
            values,
            spec_hash: fields[2].to_string(),
        });
    }
    if vectors.len() != manifest.count {
        return Err(format_err("row count disagrees with manifest"));
    }
    Ok((manifest, vectors))
}
