//! Self-describing checkpoint container.
//!
//! Layout: the magic bytes, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every base
//! parameter followed by every adapter parameter as little-endian `f64`.
//! The header names each tensor with its shape and offset.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Adapter, AdapterConfig, Layout, ModelConfig, ToyModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 12] = b"ATTRCONS-CKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterHeader {
    pub config: AdapterConfig,
    pub layout: Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub layout: Layout,
    pub adapter: Option<AdapterHeader>,
    /// Seeds that produced these weights, by purpose.
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

pub fn to_bytes(model: &ToyModel, seeds: &BTreeMap<String, u64>, meta: &BTreeMap<String, serde_json::Value>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        layout: model.layout.clone(),
        adapter: model.adapter.as_ref().map(|a| AdapterHeader {
            config: a.config,
            layout: a.layout.clone(),
        }),
        seeds: seeds.clone(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let n_adapter = model.adapter.as_ref().map_or(0, |a| a.params.len());
    let mut out = Vec::with_capacity(24 + json.len() + 8 * (model.params.len() + n_adapter));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(a) = &model.adapter {
        for p in &a.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ToyModel, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (magic mismatch)"));
    }
    let mut at = MAGIC.len();
    let version = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    at += 4;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    at += 8;
    let hend = at.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[at..hend]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    at = hend;
    header.config.validate()?;
    if header.layout != Layout::model(&header.config) {
        return Err(bad("tensor layout does not match the model config"));
    }
    let n_base = header.layout.total;
    let n_adapter = match &header.adapter {
        Some(a) => {
            if a.layout != Layout::adapter(&header.config, &a.config) {
                return Err(bad("adapter layout does not match its config"));
            }
            a.layout.total
        }
        None => 0,
    };
    if bytes.len() - at != 8 * (n_base + n_adapter) {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * (n_base + n_adapter),
            bytes.len() - at
        )));
    }
    let floats: Vec<f64> = bytes[at..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let adapter = header.adapter.as_ref().map(|a| Adapter {
        config: a.config,
        layout: a.layout.clone(),
        params: floats[n_base..].to_vec(),
    });
    let model = ToyModel {
        config: header.config.clone(),
        layout: header.layout.clone(),
        params: floats[..n_base].to_vec(),
        adapter,
    };
    Ok((model, header))
}

pub fn save(path: &Path, model: &ToyModel, seeds: &BTreeMap<String, u64>, meta: &BTreeMap<String, serde_json::Value>) -> Result<()> {
    let bytes = to_bytes(model, seeds, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ToyModel, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
