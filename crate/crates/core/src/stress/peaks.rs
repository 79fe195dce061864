use crate::error::{Error, Result};
use crate::signal;

pub const PULSE_BAND_HZ: (f64, f64) = (0.7, 2.5);
pub const REFRACTORY_S: f64 = 0.33;

/// Beat-to-beat (NN) intervals in seconds.
///
/// The trace is band-passed to the pulse band, local maxima above zero are
/// accepted from the tallest down unless a stronger peak lies within the
/// refractory period, and peak times are refined by parabolic interpolation.
pub fn detect_peaks(ppg: &[f64], fs: f64) -> Result<Vec<f64>> {
    if !(fs > 2.0 * PULSE_BAND_HZ.1) {
        return Err(Error::Config(format!("{fs} Hz is too slow for peak detection")));
    }
    if ppg.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("pulse trace contains non-finite samples".into()));
    }
    let x = signal::bandpass_fft(ppg, fs, PULSE_BAND_HZ.0, PULSE_BAND_HZ.1);
    let scale = ppg.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if x.iter().all(|v| v.abs() <= 1e-9 * scale) {
        return Err(Error::InsufficientPeaks { found: 0 });
    }
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > 0.0 && x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let gap = REFRACTORY_S * fs;
    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        if kept.iter().all(|&k| (k as f64 - i as f64).abs() >= gap) {
            kept.push(i);
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientPeaks { found: kept.len() });
    }
    kept.sort_unstable();
    let times: Vec<f64> = kept
        .iter()
        .map(|&i| {
            let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
            let den = a - 2.0 * b + c;
            let off = if den < 0.0 { (0.5 * (a - c) / den).clamp(-0.5, 0.5) } else { 0.0 };
            (i as f64 + off) / fs
        })
        .collect();
    Ok(times.windows(2).map(|w| w[1] - w[0]).collect())
}
