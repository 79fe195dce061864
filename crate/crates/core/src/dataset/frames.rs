//! Video frame storage: either fully in memory or streamed lazily from a
//! chunked on-disk container described by `index.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const VIDEO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub height: usize,
    pub width: usize,
}

impl FrameGeometry {
    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub file: String,
    pub start: usize,
    pub count: usize,
}

/// Manifest of a chunked frame container (`face_video/index.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoIndex {
    pub version: u32,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub fs: f64,
    pub chunk_frames: usize,
    pub chunks: Vec<ChunkEntry>,
}

#[derive(Debug)]
enum Storage {
    Memory(Arc<Vec<u8>>),
    Chunked {
        dir: PathBuf,
        index: VideoIndex,
        cache: Mutex<Option<(usize, Arc<Vec<u8>>)>>,
    },
}

/// A sequence of interleaved RGB `u8` frames (row-major, HWC).
#[derive(Debug)]
pub struct FrameSource {
    geometry: FrameGeometry,
    n_frames: usize,
    fs: f64,
    storage: Storage,
}

impl FrameSource {
    pub fn from_memory(data: Vec<u8>, geometry: FrameGeometry, fs: f64) -> Result<Self> {
        let len = geometry.frame_len();
        if len == 0 || data.len() % len != 0 {
            return Err(Error::Shape(format!(
                "frame buffer of {} bytes is not a multiple of {}x{}x3",
                data.len(),
                geometry.height,
                geometry.width
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::Config(format!("video rate must be positive, got {fs}")));
        }
        Ok(Self {
            geometry,
            n_frames: data.len() / len,
            fs,
            storage: Storage::Memory(Arc::new(data)),
        })
    }

    /// Opens a chunked container lazily; only `index.json` is read here.
    pub fn open_chunked(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let text = fs::read_to_string(&index_path).map_err(|e| Error::load(&index_path, e))?;
        let index: VideoIndex = serde_json::from_str(&text).map_err(|e| Error::load(&index_path, e))?;
        if index.version != VIDEO_FORMAT_VERSION {
            return Err(Error::load(&index_path, format!("unsupported version {}", index.version)));
        }
        if index.channels != CHANNELS {
            return Err(Error::load(&index_path, format!("expected 3 channels, got {}", index.channels)));
        }
        let mut expected = 0;
        for c in &index.chunks {
            if c.start != expected {
                return Err(Error::Integrity(format!("chunk {} starts at {}, expected {expected}", c.file, c.start)));
            }
            let p = dir.join(&c.file);
            if !p.is_file() {
                return Err(Error::load(p, "missing frame chunk"));
            }
            expected += c.count;
        }
        if expected != index.n_frames {
            return Err(Error::Integrity(format!(
                "chunks hold {expected} frames but index declares {}",
                index.n_frames
            )));
        }
        Ok(Self {
            geometry: FrameGeometry {
                height: index.height,
                width: index.width,
            },
            n_frames: index.n_frames,
            fs: index.fs,
            storage: Storage::Chunked {
                dir: dir.to_path_buf(),
                index,
                cache: Mutex::new(None),
            },
        })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fs
    }

    fn chunk(&self, chunk_idx: usize) -> Result<Arc<Vec<u8>>> {
        match &self.storage {
            Storage::Memory(data) => Ok(data.clone()),
            Storage::Chunked { dir, index, cache } => {
                let mut guard = cache.lock().expect("frame cache poisoned");
                if let Some((i, data)) = guard.as_ref() {
                    if *i == chunk_idx {
                        return Ok(data.clone());
                    }
                }
                let entry = &index.chunks[chunk_idx];
                let path = dir.join(&entry.file);
                let data = fs::read(&path).map_err(|e| Error::load(&path, e))?;
                if data.len() != entry.count * self.geometry.frame_len() {
                    return Err(Error::Integrity(format!(
                        "{} holds {} bytes, expected {}",
                        entry.file,
                        data.len(),
                        entry.count * self.geometry.frame_len()
                    )));
                }
                let data = Arc::new(data);
                *guard = Some((chunk_idx, data.clone()));
                Ok(data)
            }
        }
    }

    /// Copies frame `i` into `out` (length `height * width * 3`).
    pub fn read_frame_into(&self, i: usize, out: &mut [u8]) -> Result<()> {
        if i >= self.n_frames {
            return Err(Error::Shape(format!("frame {i} out of range (len {})", self.n_frames)));
        }
        let len = self.geometry.frame_len();
        let (chunk_idx, offset) = match &self.storage {
            Storage::Memory(_) => (0, i),
            Storage::Chunked { index, .. } => (i / index.chunk_frames, i % index.chunk_frames),
        };
        let data = self.chunk(chunk_idx)?;
        out.copy_from_slice(&data[offset * len..(offset + 1) * len]);
        Ok(())
    }

    pub fn frame(&self, i: usize) -> Result<Vec<u8>> {
        let mut out = vec![0u8; self.geometry.frame_len()];
        self.read_frame_into(i, &mut out)?;
        Ok(out)
    }

    /// Writes the frames as a chunked container into `dir` (created if needed).
    pub fn write_chunked(&self, dir: &Path, chunk_frames: usize) -> Result<VideoIndex> {
        let chunk_frames = chunk_frames.max(1);
        fs::create_dir_all(dir)?;
        let len = self.geometry.frame_len();
        let mut chunks = Vec::new();
        let mut buf = vec![0u8; len];
        let mut start = 0;
        while start < self.n_frames {
            let count = chunk_frames.min(self.n_frames - start);
            let mut data = Vec::with_capacity(count * len);
            for i in start..start + count {
                self.read_frame_into(i, &mut buf)?;
                data.extend_from_slice(&buf);
            }
            let file = format!("chunk_{:05}.bin", chunks.len());
            fs::write(dir.join(&file), &data)?;
            chunks.push(ChunkEntry { file, start, count });
            start += count;
        }
        let index = VideoIndex {
            version: VIDEO_FORMAT_VERSION,
            n_frames: self.n_frames,
            height: self.geometry.height,
            width: self.geometry.width,
            channels: CHANNELS,
            fs: self.fs,
            chunk_frames,
            chunks,
        };
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(index)
    }
}
