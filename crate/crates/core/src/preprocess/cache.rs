//! On-disk cache of normalised windows.
//!
//! Layout: `<root>/<session_id>/<key>/manifest.json` plus one `wNNNNN.bin`
//! tensor container per window. The key hashes the preprocessing version and
//! every parameter that changes the windows.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clip::{ClipOrigin, NormalizedClip, TargetKind};
use crate::error::{Error, Result};

pub const PREPROCESS_VERSION: &str = "crop-decimate-diffnorm/1";
const MAGIC: &[u8; 8] = b"RAWIN001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub session_id: String,
    pub window_index: usize,
    pub start_index: usize,
    pub t: usize,
    pub target_kind: TargetKind,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub preprocess_version: String,
    pub key: String,
    pub entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowHeader {
    session_id: String,
    window_index: usize,
    start_index: usize,
    t: usize,
    height: usize,
    width: usize,
    target_kind: TargetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CacheKeyParams {
    pub t: usize,
    pub stride: usize,
    pub target_kind: TargetKind,
    pub output_size: usize,
    pub fs_model: f64,
}

pub fn cache_key(session_id: &str, p: &CacheKeyParams) -> String {
    let mut h = Sha256::new();
    h.update(PREPROCESS_VERSION.as_bytes());
    h.update(session_id.as_bytes());
    h.update(serde_json::to_vec(p).expect("serialisable key"));
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn write_window(path: &Path, clip: &NormalizedClip) -> Result<()> {
    let header = WindowHeader {
        session_id: clip.origin.session_id.clone(),
        window_index: clip.window_index,
        start_index: clip.origin.start_index,
        t: clip.labels.len(),
        height: clip.height,
        width: clip.width,
        target_kind: clip.target_kind,
    };
    let hj = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + hj.len() + clip.diff_frames.len() * 4 + clip.labels.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hj.len() as u64).to_le_bytes());
    out.extend_from_slice(&hj);
    for v in &clip.diff_frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &clip.labels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_window(path: &Path) -> Result<NormalizedClip> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::load(path, e))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::load(path, "not a window container"));
    }
    let hl = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header: WindowHeader =
        serde_json::from_slice(&bytes[16..16 + hl]).map_err(|e| Error::load(path, e))?;
    let n_pix = header.t * header.height * header.width * crate::dataset::CHANNELS;
    let body = &bytes[16 + hl..];
    if body.len() != n_pix * 4 + header.t * 8 {
        return Err(Error::Integrity(format!("{}: truncated window container", path.display())));
    }
    let diff_frames = body[..n_pix * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels = body[n_pix * 4..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(NormalizedClip {
        diff_frames,
        labels,
        target_kind: header.target_kind,
        height: header.height,
        width: header.width,
        origin: ClipOrigin {
            session_id: header.session_id,
            start_index: header.start_index,
        },
        window_index: header.window_index,
    })
}

#[derive(Debug, Clone)]
pub struct WindowCache {
    root: PathBuf,
}

impl WindowCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir_for(&self, session_id: &str, p: &CacheKeyParams) -> PathBuf {
        self.root.join(session_id).join(cache_key(session_id, p))
    }

    /// Returns cached windows if a manifest with the current version exists.
    pub fn load(&self, session_id: &str, p: &CacheKeyParams) -> Result<Option<Vec<NormalizedClip>>> {
        let dir = self.dir_for(session_id, p);
        let mpath = dir.join("manifest.json");
        if !mpath.is_file() {
            return Ok(None);
        }
        let manifest: CacheManifest =
            serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| Error::load(&mpath, e))?;
        if manifest.preprocess_version != PREPROCESS_VERSION {
            return Ok(None);
        }
        manifest
            .entries
            .iter()
            .map(|e| read_window(&dir.join(&e.file)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn store(&self, session_id: &str, p: &CacheKeyParams, windows: &[NormalizedClip]) -> Result<PathBuf> {
        let dir = self.dir_for(session_id, p);
        fs::create_dir_all(&dir)?;
        let mut entries = Vec::with_capacity(windows.len());
        for w in windows {
            let file = format!("w{:05}.bin", w.window_index);
            write_window(&dir.join(&file), w)?;
            entries.push(CacheEntry {
                session_id: session_id.to_string(),
                window_index: w.window_index,
                start_index: w.origin.start_index,
                t: w.labels.len(),
                target_kind: w.target_kind,
                file,
            });
        }
        let manifest = CacheManifest {
            preprocess_version: PREPROCESS_VERSION.to_string(),
            key: cache_key(session_id, p),
            entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(dir)
    }
}
