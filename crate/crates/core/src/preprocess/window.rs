use serde::{Deserialize, Serialize};

use super::clip::{Clip, NormalizedClip, TargetKind};
use super::face::{detect_and_crop_face, CropConfig, FaceDetector};
use super::video::{decimation_indices, diff_normalize, diff_normalize_signal};
use crate::dataset::Session;
use crate::eda::decompose_tonic;
use crate::error::{Error, Result};
use crate::signal;

/// Window lengths evaluated in the window-size sweep.
pub const DEFAULT_WINDOW_SIZES: [usize; 5] = [256, 384, 512, 768, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub crop: CropConfig,
    /// Frame rate fed to the model.
    pub fs_model: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            crop: CropConfig::default(),
            fs_model: 10.0,
        }
    }
}

/// A session reduced to model rate: cropped frames plus EDA targets sampled at
/// the frame timestamps.
#[derive(Debug, Clone)]
pub struct PreparedSession {
    pub session_id: String,
    pub clip: Clip,
    pub eda_raw: Vec<f64>,
    pub eda_tonic: Vec<f64>,
}

impl PreparedSession {
    pub fn target(&self, kind: TargetKind) -> &[f64] {
        match kind {
            TargetKind::Raw => &self.eda_raw,
            TargetKind::Tonic => &self.eda_tonic,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.clip.n_frames
    }
}

/// Crops, decimates to the model rate and aligns the EDA targets.
///
/// Decimation indices are chosen before cropping, which is equivalent to
/// cropping every frame and decimating afterwards because cropping is per frame.
pub fn prepare_session(session: &Session, detector: &dyn FaceDetector, cfg: &PrepareConfig) -> Result<PreparedSession> {
    let frames = &session.face_frames;
    let idx = decimation_indices(frames.len(), frames.fs(), cfg.fs_model)?;
    let mut clip = detect_and_crop_face(frames, detector, &cfg.crop, Some(&idx), &session.participant_id)?;
    clip.fs = cfg.fs_model;
    let times: Vec<f64> = (0..clip.n_frames).map(|i| i as f64 / cfg.fs_model).collect();
    let eda_raw = signal::interp_at(session.eda.values(), session.eda.fs(), &times);
    let tonic = decompose_tonic(&session.eda)?.tonic;
    let eda_tonic = signal::interp_at(tonic.values(), tonic.fs(), &times);
    Ok(PreparedSession {
        session_id: session.participant_id.clone(),
        clip,
        eda_raw,
        eda_tonic,
    })
}

/// Start frames of windows of `t + 1` frames.
pub fn window_starts(n_frames: usize, t: usize, stride: usize) -> Vec<usize> {
    if n_frames < t + 1 || stride == 0 {
        return Vec::new();
    }
    (0..=n_frames - (t + 1)).step_by(stride).collect()
}

/// Builds one normalised clip from frames `start..=start + t`.
pub fn normalized_window(
    prepared: &PreparedSession,
    start: usize,
    t: usize,
    target: TargetKind,
    window_index: usize,
) -> Result<NormalizedClip> {
    let labels_src = prepared.target(target);
    if labels_src.len() != prepared.clip.n_frames {
        return Err(Error::Alignment(format!(
            "{} label samples for {} frames",
            labels_src.len(),
            prepared.clip.n_frames
        )));
    }
    if start + t + 1 > prepared.clip.n_frames {
        return Err(Error::Shape(format!(
            "window {start}..{} exceeds {} frames",
            start + t + 1,
            prepared.clip.n_frames
        )));
    }
    let fl = prepared.clip.frame_len();
    let frames = &prepared.clip.frames[start * fl..(start + t + 1) * fl];
    Ok(NormalizedClip {
        diff_frames: diff_normalize(frames, fl)?,
        labels: diff_normalize_signal(&labels_src[start..start + t + 1])?,
        target_kind: target,
        height: prepared.clip.height,
        width: prepared.clip.width,
        origin: super::clip::ClipOrigin {
            session_id: prepared.session_id.clone(),
            start_index: start,
        },
        window_index,
    })
}

/// Cuts a prepared session into windows of `t` difference frames.
pub fn window_clips(prepared: &PreparedSession, t: usize, stride: usize, target: TargetKind) -> Result<Vec<NormalizedClip>> {
    if t == 0 || stride == 0 || stride > t {
        return Err(Error::Config(format!("need 0 < stride <= T, got T = {t}, stride = {stride}")));
    }
    let starts = window_starts(prepared.clip.n_frames, t, stride);
    if starts.is_empty() {
        log::warn!(
            "session {} has {} frames, fewer than T + 1 = {}; no windows produced",
            prepared.session_id,
            prepared.clip.n_frames,
            t + 1
        );
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| normalized_window(prepared, s, t, target, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::clip::ClipOrigin;

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(5700, 768, 768).len(), 7);
        assert_eq!(window_starts(5700, 256, 256).len(), 22);
        assert!(window_starts(100, 256, 256).is_empty());
        // half stride: floor((N - 1 - T) / (T / 2)) + 1
        for &t in &DEFAULT_WINDOW_SIZES {
            let full = window_starts(5700, t, t).len();
            let half = window_starts(5700, t, t / 2).len();
            assert_eq!(half, (5700 - 1 - t) / (t / 2) + 1);
            assert!(half >= 2 * full - 1 && half <= 2 * full + 1, "T {t}: {full} vs {half}");
        }
    }

    #[test]
    fn window_seconds() {
        assert!((768.0 / 10.0 - 76.8f64).abs() < 1e-12);
        assert!((256.0 / 10.0 - 25.6f64).abs() < 1e-12 && (1024.0 / 10.0 - 102.4f64).abs() < 1e-12);
    }

    fn prepared(n: usize) -> PreparedSession {
        let fl = 2 * 2 * 3;
        let frames: Vec<f32> = (0..n * fl).map(|i| ((i * 7919) % 251) as f32).collect();
        let origin = ClipOrigin {
            session_id: "p".into(),
            start_index: 0,
        };
        let ramp: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin() + 3.0).collect();
        PreparedSession {
            session_id: "p".into(),
            clip: Clip::new(frames, 2, 2, 10.0, origin).unwrap(),
            eda_raw: ramp.clone(),
            eda_tonic: ramp,
        }
    }

    #[test]
    fn windows_have_matching_lengths() {
        let p = prepared(100);
        let w = window_clips(&p, 32, 32, TargetKind::Raw).unwrap();
        assert_eq!(w.len(), 3);
        for c in &w {
            assert_eq!(c.labels.len(), 32);
            assert_eq!(c.diff_frames.len(), 32 * 12);
        }
        assert!(window_clips(&p, 32, 33, TargetKind::Raw).is_err());
        assert!(window_clips(&p, 200, 200, TargetKind::Raw).unwrap().is_empty());
    }

    #[test]
    fn misaligned_labels_rejected() {
        let mut p = prepared(100);
        p.eda_raw.pop();
        assert!(matches!(
            window_clips(&p, 32, 32, TargetKind::Raw),
            Err(Error::Alignment(_))
        ));
    }
}
