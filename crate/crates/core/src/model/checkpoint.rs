//! Checkpoint container: `RACKPT01`, a little-endian u64 header length, a JSON
//! header (version, model config, tensor table), then raw little-endian f64 data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RACKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for p in model.params() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: data.len(),
            len: p.len(),
        });
        data.extend_from_slice(&p.value);
    }
    for (name, b) in model.buffers() {
        tensors.push(TensorEntry {
            name,
            shape: vec![b.len()],
            offset: data.len(),
            len: b.len(),
        });
        data.extend_from_slice(b);
    }
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::load(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::load(path, "not a model checkpoint"));
    }
    let hl = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + hl {
        return Err(Error::Integrity(format!("{}: truncated header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hl]).map_err(|e| Error::load(path, e))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::load(
            path,
            format!("checkpoint version {} (supported: {CHECKPOINT_VERSION})", header.version),
        ));
    }
    let body = &bytes[16 + hl..];
    let value = |e: &TensorEntry| -> Result<Vec<f64>> {
        let (a, b) = (e.offset * 8, (e.offset + e.len) * 8);
        if b > body.len() {
            return Err(Error::Integrity(format!("{}: tensor {} out of range", path.display(), e.name)));
        }
        Ok(body[a..b]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let mut model = build_model(&header.config)?;
    let find = |name: &str| header.tensors.iter().find(|e| e.name == name);
    for p in model.params_mut() {
        let e = find(&p.name).ok_or_else(|| Error::Integrity(format!("checkpoint lacks {}", p.name)))?;
        if e.shape != p.shape {
            return Err(Error::Integrity(format!("{}: shape {:?} vs {:?}", p.name, e.shape, p.shape)));
        }
        p.value = value(e)?;
    }
    for (name, b) in model.buffers_mut() {
        let e = find(&name).ok_or_else(|| Error::Integrity(format!("checkpoint lacks {name}")))?;
        if e.len != b.len() {
            return Err(Error::Integrity(format!("{name}: length {} vs {}", e.len, b.len())));
        }
        *b = value(e)?;
    }
    Ok(model)
}
