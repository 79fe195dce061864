use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::frames::FrameSource;
use super::series::Series;
use crate::error::{Error, Result};

/// Allowed disagreement between video and physiological durations.
pub const DURATION_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl PinchInterval {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// One participant's recording.
#[derive(Debug, Clone)]
pub struct Session {
    pub participant_id: String,
    pub face_frames: Arc<FrameSource>,
    pub eda: Series,
    pub ppg: Series,
    pub pinch_intervals: Vec<PinchInterval>,
    /// Fitzpatrick skin type 1-6, if known.
    pub skin_type: Option<u8>,
}

impl Session {
    pub fn new(
        participant_id: impl Into<String>,
        face_frames: FrameSource,
        eda: Series,
        ppg: Series,
        pinch_intervals: Vec<PinchInterval>,
        skin_type: Option<u8>,
    ) -> Result<Self> {
        let s = Self {
            participant_id: participant_id.into(),
            face_frames: Arc::new(face_frames),
            eda,
            ppg,
            pinch_intervals,
            skin_type,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn duration_s(&self) -> f64 {
        self.face_frames.duration_s()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(st) = self.skin_type {
            if !(1..=6).contains(&st) {
                return Err(Error::Integrity(format!("skin type {st} outside 1..=6")));
            }
        }
        let video = self.face_frames.duration_s();
        for (name, s) in [("eda", &self.eda), ("ppg", &self.ppg)] {
            let gap = (s.duration_s() - video).abs();
            if gap > DURATION_TOLERANCE_S {
                return Err(Error::Integrity(format!(
                    "{name} lasts {:.3} s but video lasts {video:.3} s",
                    s.duration_s()
                )));
            }
        }
        let mut prev_end = 0.0;
        for p in &self.pinch_intervals {
            if !(p.start_s < p.end_s) || p.start_s < prev_end || p.end_s > video + 1e-9 {
                return Err(Error::Integrity(format!(
                    "pinch interval ({}, {}) is unordered, overlapping or outside the recording",
                    p.start_s, p.end_s
                )));
            }
            prev_end = p.end_s;
        }
        Ok(())
    }

    /// Replaces the EDA trace, keeping every other field.
    pub fn with_eda(&self, eda: Series) -> Result<Session> {
        let mut s = self.clone();
        s.eda = eda;
        s.validate()?;
        Ok(s)
    }
}

/// The canonical protocol: 2 min rest alternating with 30 s pinching, three times.
pub fn protocol_pinch_intervals() -> Vec<PinchInterval> {
    [120.0, 270.0, 420.0]
        .iter()
        .map(|&s| PinchInterval::new(s, s + 30.0))
        .collect()
}
