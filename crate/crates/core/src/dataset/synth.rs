//! Synthetic sessions with a known coupling between skin conductance and the
//! face video, so the full pipeline can be exercised without recorded data.
//!
//! The generated EDA is a baseline plus a tonic random walk confined to the
//! arousal band, plus smooth rises during each pinch interval and a sparse
//! train of small skin-conductance responses. The video is a static textured
//! face whose global intensity carries (a) the arousal-band component of the
//! tonic EDA and (b) a cardiac oscillation whose amplitude follows the same
//! arousal signal. The PPG trace carries the same cardiac oscillation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frames::{FrameGeometry, FrameSource, CHANNELS};
use super::series::Series;
use super::session::{protocol_pinch_intervals, PinchInterval, Session};
use crate::error::{Error, Result};
use crate::signal;

pub const EDA_MIN_US: f64 = 0.5;
pub const EDA_MAX_US: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub duration_s: f64,
    pub fs_video: f64,
    pub fs_physio: f64,
    /// Side length of the square rendered frames.
    pub frame_size: usize,
    pub arousal_band: (f64, f64),
    /// Pass band of the tonic random walk; must lie inside `arousal_band`.
    pub walk_band: (f64, f64),
    pub cardiac_band: (f64, f64),
    /// Pixel intensity levels per microsiemens of arousal-band tonic EDA.
    pub arousal_gain: f64,
    /// Peak pixel amplitude of the cardiac oscillation.
    pub cardiac_gain: f64,
    /// Relative modulation depth of the pulse amplitude by arousal, in [0, 1).
    pub pulse_coupling: f64,
    /// Standard deviation of additive per-pixel noise, in intensity levels.
    pub noise_level: f64,
    /// Standard deviation of the tonic random walk (microsiemens).
    pub tonic_walk_us: f64,
    /// Height of the conductance rise evoked by each pinch (microsiemens).
    pub pinch_step_us: f64,
    pub phasic_rate_per_min: f64,
    pub pinch_intervals: Vec<PinchInterval>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 3,
            duration_s: 570.0,
            fs_video: 100.0,
            fs_physio: 50.0,
            frame_size: 48,
            arousal_band: (0.045, 0.25),
            walk_band: (0.045, 0.25),
            cardiac_band: (0.7, 2.5),
            arousal_gain: 12.0,
            cardiac_gain: 1.5,
            pulse_coupling: 0.5,
            noise_level: 2.0,
            tonic_walk_us: 1.2,
            pinch_step_us: 0.8,
            phasic_rate_per_min: 1.0,
            pinch_intervals: protocol_pinch_intervals(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same as the default but rendered directly at 10 Hz.
    pub fn fast() -> Self {
        Self {
            fs_video: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_participants == 0 {
            return err("n_participants must be positive".into());
        }
        if !(self.duration_s > 0.0) || !(self.fs_video > 0.0) || !(self.fs_physio > 0.0) {
            return err("duration and sampling rates must be positive".into());
        }
        if self.frame_size < 4 {
            return err(format!("frame_size {} too small", self.frame_size));
        }
        let nyq = self.fs_video.min(self.fs_physio) / 2.0;
        for (name, (lo, hi)) in [("arousal", self.arousal_band), ("cardiac", self.cardiac_band)] {
            if !(lo > 0.0 && lo < hi && hi < nyq) {
                return err(format!("{name} band ({lo}, {hi}) must lie inside (0, {nyq})"));
            }
        }
        let (wlo, whi) = self.walk_band;
        if !(wlo < whi && wlo >= self.arousal_band.0 && whi <= self.arousal_band.1) {
            return err(format!("walk band ({wlo}, {whi}) must lie inside the arousal band"));
        }
        for (name, v) in [
            ("arousal_gain", self.arousal_gain),
            ("cardiac_gain", self.cardiac_gain),
            ("noise_level", self.noise_level),
            ("tonic_walk_us", self.tonic_walk_us),
            ("pinch_step_us", self.pinch_step_us),
            ("phasic_rate_per_min", self.phasic_rate_per_min),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be a non-negative finite number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.pulse_coupling) {
            return err(format!("pulse_coupling must be in [0, 1), got {}", self.pulse_coupling));
        }
        Ok(())
    }
}

/// Generator internals kept alongside a synthetic session for self-checks.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// Tonic EDA at the physiological rate (before phasic responses and clamping).
    pub tonic: Vec<f64>,
    /// Arousal-band pixel modulation at the physiological rate.
    pub modulation: Vec<f64>,
    /// Same modulation sampled at the video frame timestamps.
    pub modulation_video: Vec<f64>,
    /// Instantaneous heart rate (Hz) at the physiological rate.
    pub heart_rate_hz: Vec<f64>,
    /// Pulse-amplitude envelope at the video frame timestamps.
    pub pulse_envelope_video: Vec<f64>,
    /// Phasic response onsets in seconds.
    pub scr_onsets_s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub session: Session,
    pub truth: SynthTruth,
}

fn participant_rng(config: &SynthConfig, participant_seed: u64) -> ChaCha8Rng {
    let mixed = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(participant_seed.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        ^ 0x5EED;
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Bateman-shaped skin conductance response normalised to unit peak.
fn scr_shape(t: f64) -> f64 {
    const TAU_DECAY: f64 = 2.0;
    const TAU_RISE: f64 = 0.7;
    if t <= 0.0 {
        return 0.0;
    }
    let t_peak = (TAU_DECAY * TAU_RISE / (TAU_DECAY - TAU_RISE)) * (TAU_DECAY / TAU_RISE).ln();
    let peak = (-t_peak / TAU_DECAY).exp() - (-t_peak / TAU_RISE).exp();
    ((-t / TAU_DECAY).exp() - (-t / TAU_RISE).exp()) / peak
}

/// Conductance rise evoked by a pinch: exponential approach during the
/// interval, exponential recovery afterwards.
fn pinch_response(t: f64, p: &PinchInterval) -> f64 {
    const TAU_RISE: f64 = 8.0;
    const TAU_RECOVERY: f64 = 20.0;
    if t < p.start_s {
        0.0
    } else if t <= p.end_s {
        1.0 - (-(t - p.start_s) / TAU_RISE).exp()
    } else {
        let at_end = 1.0 - (-p.duration_s() / TAU_RISE).exp();
        at_end * (-(t - p.end_s) / TAU_RECOVERY).exp()
    }
}

/// Static RGB texture: a skin-toned ellipse on a cool-coloured background.
fn render_pattern(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.05..0.4),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(3.0..8.0),
            )
        })
        .collect();
    let skin = [190.0, 140.0, 115.0];
    let background = [70.0, 95.0, 135.0];
    let c = (size as f64 - 1.0) / 2.0;
    let (ax, ay) = (0.34 * size as f64, 0.44 * size as f64);
    let mut out = vec![0.0; size * size * CHANNELS];
    for y in 0..size {
        for x in 0..size {
            let tex: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            let dx = (x as f64 - c) / ax;
            let dy = (y as f64 - c) / ay;
            let base = if dx * dx + dy * dy <= 1.0 { skin } else { background };
            for ch in 0..CHANNELS {
                out[(y * size + x) * CHANNELS + ch] = base[ch] + tex;
            }
        }
    }
    out
}

pub fn generate_synthetic_session(config: &SynthConfig, participant_seed: u64) -> Result<Session> {
    Ok(generate_with_truth(config, participant_seed)?.session)
}

pub fn generate_with_truth(config: &SynthConfig, participant_seed: u64) -> Result<SyntheticSession> {
    config.validate()?;
    let mut rng = participant_rng(config, participant_seed);
    let fs = config.fs_physio;
    let n_phys = (config.duration_s * fs).round() as usize;
    let n_video = (config.duration_s * config.fs_video).round() as usize;
    let t_phys: Vec<f64> = (0..n_phys).map(|i| i as f64 / fs).collect();
    let t_video: Vec<f64> = (0..n_video).map(|i| i as f64 / config.fs_video).collect();

    // Tonic EDA.
    let baseline: f64 = rng.gen_range(2.0..6.0);
    let (alo, ahi) = config.arousal_band;
    let walk = signal::band_limited_noise(&mut rng, n_phys, fs, config.walk_band.0, config.walk_band.1);
    let tonic: Vec<f64> = t_phys
        .iter()
        .zip(&walk)
        .map(|(&t, &w)| {
            let pinch: f64 = config.pinch_intervals.iter().map(|p| pinch_response(t, p)).sum();
            baseline + config.tonic_walk_us * w + config.pinch_step_us * pinch
        })
        .collect();

    // Sparse phasic responses.
    let expected = config.phasic_rate_per_min * config.duration_s / 60.0;
    let n_scr = if expected > 0.0 {
        rand_distr::Poisson::new(expected)
            .map(|d| d.sample(&mut rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let mut scr: Vec<(f64, f64)> = (0..n_scr)
        .map(|_| (rng.gen_range(0.0..config.duration_s), rng.gen_range(0.03..0.12)))
        .collect();
    scr.sort_by(|a, b| a.0.total_cmp(&b.0));
    let eda: Vec<f64> = t_phys
        .iter()
        .zip(&tonic)
        .map(|(&t, &ton)| {
            let phasic: f64 = scr.iter().map(|&(on, amp)| amp * scr_shape(t - on)).sum();
            (ton + phasic).clamp(EDA_MIN_US, EDA_MAX_US)
        })
        .collect();

    // Arousal-band coupling into the video.
    let tonic_mean = signal::mean(&tonic);
    let centred: Vec<f64> = tonic.iter().map(|v| v - tonic_mean).collect();
    let modulation = signal::bandpass_fft(&centred, fs, alo, ahi);
    let modulation_video = signal::interp_at(&modulation, fs, &t_video);
    let mod_std = signal::std(&modulation).max(1e-12);

    // Cardiac oscillation shared by PPG and video.
    let (clo, chi) = config.cardiac_band;
    let hr_base: f64 = rng.gen_range(62.0..82.0) / 60.0;
    let hrv = signal::band_limited_noise(&mut rng, n_phys, fs, 0.02, 0.15);
    let heart_rate_hz: Vec<f64> = hrv
        .iter()
        .map(|v| (hr_base + 0.05 * v).clamp(clo, chi))
        .collect();
    let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut phase = Vec::with_capacity(n_phys);
    let mut acc = phase0;
    for &hr in &heart_rate_hz {
        phase.push(acc);
        acc += std::f64::consts::TAU * hr / fs;
    }
    let envelope = |m: f64| 1.0 + config.pulse_coupling * (m / mod_std).tanh();
    let ppg_noise = Normal::new(0.0, 0.02).expect("valid normal");
    let ppg: Vec<f64> = phase
        .iter()
        .zip(&modulation)
        .map(|(&ph, &m)| envelope(m) * ph.sin() + ppg_noise.sample(&mut rng))
        .collect();
    let phase_video = signal::interp_at(&phase, fs, &t_video);
    let pulse_envelope_video: Vec<f64> = modulation_video.iter().map(|&m| envelope(m)).collect();

    // Render frames.
    let size = config.frame_size;
    let pattern = render_pattern(&mut rng, size);
    let pulse_weights = [0.5, 1.0, 0.3];
    let pix_noise = Normal::new(0.0, config.noise_level.max(f64::MIN_POSITIVE)).expect("valid normal");
    let frame_len = size * size * CHANNELS;
    let mut frames = Vec::with_capacity(n_video * frame_len);
    for i in 0..n_video {
        let arousal_offset = config.arousal_gain * modulation_video[i];
        let pulse = config.cardiac_gain * pulse_envelope_video[i] * phase_video[i].sin();
        for (k, &p) in pattern.iter().enumerate() {
            let mut v = p + arousal_offset + pulse_weights[k % CHANNELS] * pulse;
            if config.noise_level > 0.0 {
                v += pix_noise.sample(&mut rng);
            }
            frames.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }

    let geometry = FrameGeometry {
        height: size,
        width: size,
    };
    let skin_type = rng.gen_range(1..=6u8);
    let session = Session::new(
        format!("S{participant_seed:03}"),
        FrameSource::from_memory(frames, geometry, config.fs_video)?,
        Series::new(eda, fs, "uS")?,
        Series::new(ppg, fs, "au")?,
        config.pinch_intervals.clone(),
        Some(skin_type),
    )?;
    Ok(SyntheticSession {
        session,
        truth: SynthTruth {
            tonic,
            modulation,
            modulation_video,
            heart_rate_hz,
            pulse_envelope_video,
            scr_onsets_s: scr.iter().map(|s| s.0).collect(),
        },
    })
}
