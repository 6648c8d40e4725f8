//! `.mvgt` checkpoints: `"MVGT"`, a little-endian u32 header length, a JSON
//! header, then every parameter as little-endian f64 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spatial::{ElectrodeLayout, RegionScheme};

use crate::config::ModelConfig;
use crate::error::{MvgtError, Result};
use crate::model::Mvgt;

pub const MAGIC: &[u8; 4] = b"MVGT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the parameter blob.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    layout: serde_json::Value,
    scheme: serde_json::Value,
}

pub fn to_bytes(model: &Mvgt) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(model.store().numel() * 8);
    for (_, name, t) in model.store().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        config: model.config().clone(),
        tensors,
        layout: serde_json::from_str(&model.layout().to_json())?,
        scheme: serde_json::from_str(&model.scheme().to_json())?,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| MvgtError::Checkpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mvgt> {
    let bad = |m: &str| MvgtError::Checkpoint(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing MVGT magic"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    let blob = &bytes[8 + len..];
    let layout = ElectrodeLayout::from_json(&header.layout.to_string())?;
    let scheme = RegionScheme::from_json(&header.scheme.to_string())?;
    let mut model = Mvgt::new(header.config, layout, scheme, 0)?;
    if header.tensors.len() != model.store().len() {
        return Err(MvgtError::Checkpoint(format!(
            "{} tensors stored, model has {}",
            header.tensors.len(),
            model.store().len()
        )));
    }
    let mut consumed = 0;
    for entry in &header.tensors {
        let id = model
            .store()
            .id(&entry.name)
            .ok_or_else(|| MvgtError::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        if model.store().get(id).shape() != entry.shape.as_slice() {
            return Err(MvgtError::Checkpoint(format!(
                "tensor {} has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                model.store().get(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let raw = blob
            .get(entry.offset..entry.offset + n * 8)
            .ok_or_else(|| MvgtError::Checkpoint(format!("tensor {} runs past the blob", entry.name)))?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        model.store_mut().set_data(id, &data)?;
        consumed += n * 8;
    }
    if consumed != blob.len() {
        return Err(bad("parameter blob has trailing bytes"));
    }
    Ok(model)
}

pub fn save(model: &Mvgt, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Mvgt> {
    from_bytes(&fs::read(path)?)
}
