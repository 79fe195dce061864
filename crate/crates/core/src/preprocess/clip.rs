use serde::{Deserialize, Serialize};

use crate::dataset::CHANNELS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Raw,
    Tonic,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Raw => "raw",
            TargetKind::Tonic => "tonic",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(TargetKind::Raw),
            "tonic" => Ok(TargetKind::Tonic),
            other => Err(Error::Config(format!("unknown target kind '{other}' (expected raw or tonic)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipOrigin {
    pub session_id: String,
    pub start_index: usize,
}

/// A video tensor `(T, H, W, 3)` of pixel intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub fs: f64,
    pub origin: ClipOrigin,
}

impl Clip {
    pub fn new(frames: Vec<f32>, height: usize, width: usize, fs: f64, origin: ClipOrigin) -> Result<Self> {
        let fl = height * width * CHANNELS;
        if fl == 0 || frames.len() % fl != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form whole {height}x{width}x3 frames",
                frames.len()
            )));
        }
        Ok(Self {
            n_frames: frames.len() / fl,
            frames,
            height,
            width,
            fs,
            origin,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let fl = self.frame_len();
        &self.frames[i * fl..(i + 1) * fl]
    }

    /// Frames `start..end` as a new clip.
    pub fn sub_clip(&self, start: usize, end: usize) -> Clip {
        let fl = self.frame_len();
        Clip {
            frames: self.frames[start * fl..end * fl].to_vec(),
            n_frames: end - start,
            height: self.height,
            width: self.width,
            fs: self.fs,
            origin: ClipOrigin {
                session_id: self.origin.session_id.clone(),
                start_index: self.origin.start_index + start,
            },
        }
    }

    /// Spatial mean of one channel per frame.
    pub fn channel_means(&self, channel: usize) -> Vec<f64> {
        (0..self.n_frames)
            .map(|i| {
                let f = self.frame(i);
                let s: f64 = f.iter().skip(channel).step_by(CHANNELS).map(|&v| v as f64).sum();
                s / (self.height * self.width) as f64
            })
            .collect()
    }
}

/// Difference-standardised frames with the matching label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedClip {
    /// `(T, H, W, 3)` standardised consecutive frame differences.
    pub diff_frames: Vec<f32>,
    pub labels: Vec<f64>,
    pub target_kind: TargetKind,
    pub height: usize,
    pub width: usize,
    pub origin: ClipOrigin,
    pub window_index: usize,
}

impl NormalizedClip {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
