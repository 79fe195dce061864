//! Small numeric helpers shared by the signal-processing modules.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn cumsum(x: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

pub fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Linear interpolation of `values` (sampled at `fs_in`, first sample at t = 0)
/// at the given timestamps. Timestamps outside the support are clamped.
pub fn interp_at(values: &[f64], fs_in: f64, times: &[f64]) -> Vec<f64> {
    let n = values.len();
    times
        .iter()
        .map(|&t| {
            let pos = (t * fs_in).max(0.0);
            let i = pos.floor() as usize;
            if i + 1 >= n {
                return values[n - 1];
            }
            let frac = pos - i as f64;
            values[i] * (1.0 - frac) + values[i + 1] * frac
        })
        .collect()
}

/// Resample to `fs_out` by linear interpolation, producing `n_out` samples.
pub fn resample_linear(values: &[f64], fs_in: f64, fs_out: f64, n_out: usize) -> Vec<f64> {
    let times: Vec<f64> = (0..n_out).map(|i| i as f64 / fs_out).collect();
    interp_at(values, fs_in, &times)
}

fn fft_forward(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn fft_inverse_real(mut spec: Vec<Complex<f64>>) -> Vec<f64> {
    let n = spec.len();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Frequency (Hz) of FFT bin `k` for a length-`n` transform, folded to [0, fs/2].
fn bin_freq(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k > n / 2 { n - k } else { k };
    k as f64 * fs / n as f64
}

/// Zero-phase band-pass by masking the spectrum to [lo, hi] Hz. The mean is removed.
pub fn bandpass_fft(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut spec = fft_forward(x);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = bin_freq(k, n, fs);
        if k == 0 || f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    fft_inverse_real(spec)
}

/// Fraction of (mean-removed) spectral energy falling inside [lo, hi] Hz.
pub fn band_energy_fraction(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let spec = fft_forward(&centered);
    let mut total = 0.0;
    let mut inside = 0.0;
    for (k, c) in spec.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        let f = bin_freq(k, n, fs);
        if f >= lo && f <= hi {
            inside += e;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    inside / total
}

/// Amplitude of the spectral component nearest to `freq` (single-sided).
pub fn tone_amplitude(x: &[f64], fs: f64, freq: f64) -> f64 {
    let n = x.len();
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let spec = fft_forward(&centered);
    let k = (freq * n as f64 / fs).round() as usize;
    2.0 * spec[k.min(n / 2)].norm() / n as f64
}

/// Real noise whose spectrum is confined to [lo, hi] Hz, scaled to unit standard deviation.
pub fn band_limited_noise<R: rand::Rng>(rng: &mut R, n: usize, fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f >= lo && f <= hi {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            spec[k] = Complex::new(re, im);
            if k != n - k {
                spec[n - k] = Complex::new(re, -im);
            } else {
                spec[k] = Complex::new(re, 0.0);
            }
        }
    }
    let x = fft_inverse_real(spec);
    let s = std(&x);
    if s == 0.0 {
        return x;
    }
    x.iter().map(|v| v / s).collect()
}
