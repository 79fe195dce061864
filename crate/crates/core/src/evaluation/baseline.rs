//! Blood-pulsation-amplitude baseline: the cardiac amplitude on the forehead
//! rises with sympathetic arousal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{BBox, Clip};
use crate::signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpaConfig {
    pub band_hz: (f64, f64),
    pub window_s: f64,
    pub step_s: f64,
}

impl Default for BpaConfig {
    fn default() -> Self {
        Self {
            band_hz: (0.7, 2.5),
            window_s: 30.0,
            step_s: 10.0,
        }
    }
}

/// Pulse amplitude per sliding window, timestamped at the window centres.
#[derive(Debug, Clone, PartialEq)]
pub struct BpaEnvelope {
    pub centers_s: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl BpaEnvelope {
    /// Linear interpolation at arbitrary times, held constant beyond the ends.
    pub fn at(&self, times: &[f64]) -> Vec<f64> {
        times
            .iter()
            .map(|&t| {
                let c = &self.centers_s;
                match c.iter().position(|&x| x >= t) {
                    None => *self.amplitude.last().unwrap_or(&0.0),
                    Some(0) => self.amplitude[0],
                    Some(k) => {
                        let f = (t - c[k - 1]) / (c[k] - c[k - 1]);
                        self.amplitude[k - 1] * (1.0 - f) + self.amplitude[k] * f
                    }
                }
            })
            .collect()
    }
}

/// Pulse-amplitude envelope of the green channel inside `roi`.
///
/// `roi` defaults to the upper third of the crop. The amplitude of a window is
/// `sqrt(2)` times the RMS of the band-passed trace, which equals the peak
/// amplitude of a pure sinusoid.
pub fn baseline_bpa(clip: &Clip, roi: Option<BBox>, cfg: &BpaConfig) -> Result<BpaEnvelope> {
    let roi = roi.unwrap_or(BBox {
        x: 0,
        y: 0,
        w: clip.width,
        h: clip.height / 3,
    });
    if roi.w == 0 || roi.h == 0 {
        return Err(Error::Domain("baseline ROI is empty".into()));
    }
    if roi.x + roi.w > clip.width || roi.y + roi.h > clip.height {
        return Err(Error::Shape(format!(
            "ROI {roi:?} outside {}x{} frame",
            clip.width, clip.height
        )));
    }
    let (lo, hi) = cfg.band_hz;
    if !(lo > 0.0 && lo < hi && hi < clip.fs / 2.0) {
        return Err(Error::Config(format!(
            "pulse band ({lo}, {hi}) Hz must lie below the {} Hz Nyquist rate",
            clip.fs / 2.0
        )));
    }
    let win = (cfg.window_s * clip.fs).round() as usize;
    let step = (cfg.step_s * clip.fs).round() as usize;
    if win < 2 || step == 0 || win > clip.n_frames {
        return Err(Error::InsufficientData(format!(
            "{} frames cannot hold a {} s window",
            clip.n_frames, cfg.window_s
        )));
    }
    let green: Vec<f64> = (0..clip.n_frames)
        .map(|i| {
            let f = clip.frame(i);
            let mut s = 0.0;
            for y in roi.y..roi.y + roi.h {
                let row = (y * clip.width + roi.x) * 3;
                s += f[row..row + roi.w * 3].iter().skip(1).step_by(3).map(|&v| v as f64).sum::<f64>();
            }
            s / (roi.w * roi.h) as f64
        })
        .collect();
    let m = signal::mean(&green);
    let centred: Vec<f64> = green.iter().map(|v| v - m).collect();
    let pulse = signal::bandpass_fft(&centred, clip.fs, lo, hi);
    let mut centers_s = Vec::new();
    let mut amplitude = Vec::new();
    let mut start = 0;
    while start + win <= pulse.len() {
        let w = &pulse[start..start + win];
        let rms = (w.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt();
        centers_s.push((start as f64 + win as f64 / 2.0) / clip.fs);
        amplitude.push(std::f64::consts::SQRT_2 * rms);
        start += step;
    }
    Ok(BpaEnvelope { centers_s, amplitude })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::ClipOrigin;

    fn clip(n: usize, amp: impl Fn(f64) -> f64) -> Clip {
        let (h, w, fs) = (9, 6, 10.0);
        let mut frames = Vec::new();
        for i in 0..n {
            let t = i as f64 / fs;
            let v = 100.0 + amp(t) * (std::f64::consts::TAU * 1.2 * t).sin();
            for _ in 0..h * w {
                frames.extend_from_slice(&[100.0, v as f32, 100.0]);
            }
        }
        let origin = ClipOrigin {
            session_id: "b".into(),
            start_index: 0,
        };
        Clip::new(frames, h, w, fs, origin).unwrap()
    }

    #[test]
    fn recovers_constant_amplitude() {
        let env = baseline_bpa(&clip(1200, |_| 2.0), None, &BpaConfig::default()).unwrap();
        assert_eq!(env.amplitude.len(), (1200 - 300) / 100 + 1);
        assert!((env.centers_s[0] - 15.0).abs() < 1e-12);
        for a in &env.amplitude {
            assert!((a - 2.0).abs() < 0.05, "{a}");
        }
    }

    #[test]
    fn tracks_amplitude_ramp() {
        let env = baseline_bpa(&clip(1800, |t| 1.0 + t / 60.0), None, &BpaConfig::default()).unwrap();
        assert!(env.amplitude.windows(2).all(|p| p[1] > p[0]));
        let mid = env.at(&[env.centers_s[2]]);
        assert!((mid[0] - env.amplitude[2]).abs() < 1e-12);
    }

    #[test]
    fn empty_roi_rejected() {
        let c = clip(400, |_| 1.0);
        let roi = BBox { x: 0, y: 0, w: 0, h: 3 };
        assert!(matches!(baseline_bpa(&c, Some(roi), &BpaConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_video_gives_flat_envelope() {
        let env = baseline_bpa(&clip(600, |_| 0.0), None, &BpaConfig::default()).unwrap();
        assert!(env.amplitude.iter().all(|&a| a == 0.0));
        let r = crate::eda::spearman(&env.amplitude, &(0..env.amplitude.len()).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(r, Err(Error::UndefinedCorrelation(_))));
    }
}
