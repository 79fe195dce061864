use super::clip::Clip;
use crate::error::{Error, Result};

/// Degenerate-variance guard for difference standardisation.
pub const DIFF_EPS: f64 = 1e-7;

/// Frame indices kept when decimating from `fs_in` to `fs_out`.
pub fn decimation_indices(n_frames: usize, fs_in: f64, fs_out: f64) -> Result<Vec<usize>> {
    let ratio = fs_in / fs_out;
    let stride = ratio.round();
    if !(fs_out > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-9 {
        return Err(Error::Resample(format!(
            "{fs_in} Hz is not an integer multiple of {fs_out} Hz"
        )));
    }
    Ok((0..n_frames).step_by(stride as usize).collect())
}

/// Stride decimation: output frame `i` is input frame `i * fs_in / fs_out`.
pub fn resample_video(clip: &Clip, fs_out: f64) -> Result<Clip> {
    let idx = decimation_indices(clip.n_frames, clip.fs, fs_out)?;
    let fl = clip.frame_len();
    let mut frames = Vec::with_capacity(idx.len() * fl);
    for &i in &idx {
        frames.extend_from_slice(clip.frame(i));
    }
    Clip::new(frames, clip.height, clip.width, fs_out, clip.origin.clone())
}

/// Consecutive frame differences divided by their overall standard deviation.
///
/// `frames` holds `T + 1` frames of `frame_len` values each; the result holds
/// `T` frames. The deviation is taken over every element of the difference
/// tensor and floored at [`DIFF_EPS`].
pub fn diff_normalize(frames: &[f32], frame_len: usize) -> Result<Vec<f32>> {
    if frame_len == 0 || frames.len() % frame_len != 0 || frames.len() < 2 * frame_len {
        return Err(Error::Shape(format!(
            "diff_normalize needs at least two whole frames, got {} values with frame length {frame_len}",
            frames.len()
        )));
    }
    let d: Vec<f64> = frames[frame_len..]
        .iter()
        .zip(&frames[..frames.len() - frame_len])
        .map(|(&b, &a)| b as f64 - a as f64)
        .collect();
    let scale = 1.0 / overall_std(&d).max(DIFF_EPS);
    Ok(d.iter().map(|v| (v * scale) as f32).collect())
}

/// Same normalisation for a 1-D signal of `T + 1` samples.
pub fn diff_normalize_signal(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Alignment(format!(
            "label signal needs at least 2 samples, got {}",
            values.len()
        )));
    }
    let d = crate::signal::diff(values);
    let scale = 1.0 / overall_std(&d).max(DIFF_EPS);
    Ok(d.iter().map(|v| v * scale).collect())
}

fn overall_std(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}
