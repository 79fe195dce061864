//! Dense optical flow magnitude via iterative, Gaussian-windowed Lucas-Kanade.
//!
//! Every pixel gets its own flow vector, refined by warping the second frame
//! towards the first. Suited to the small inter-frame motion of a
//! head-restrained subject; there is no multi-scale pyramid.

use super::clip::Clip;
use crate::dataset::{Series, CHANNELS};
use crate::error::{Error, Result};

const WINDOW_SIGMA: f64 = 2.0;
const ITERATIONS: usize = 8;
const BORDER: usize = 4;
const MIN_DET: f64 = 1e-6;

struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        (1.0 - fy) * ((1.0 - fx) * self.at(x0, y0) + fx * self.at(x0 + 1, y0))
            + fy * ((1.0 - fx) * self.at(x0, y0 + 1) + fx * self.at(x0 + 1, y0 + 1))
    }
}

fn to_gray(frame: &[f32], h: usize, w: usize) -> Image {
    let data = frame
        .chunks_exact(CHANNELS)
        .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / CHANNELS as f64)
        .collect();
    Image { h, w, data }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(data: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel flow `(u, v)` from `a` to `b`.
fn dense_flow(a: &Image, b: &Image) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (a.h, a.w);
    let kernel = gaussian_kernel(WINDOW_SIGMA);
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            ix[y * w + x] = 0.5 * (a.at(xi + 1, yi) - a.at(xi - 1, yi));
            iy[y * w + x] = 0.5 * (a.at(xi, yi + 1) - a.at(xi, yi - 1));
        }
    }
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let sxx = blur(&prod(&ix, &ix), h, w, &kernel);
    let sxy = blur(&prod(&ix, &iy), h, w, &kernel);
    let syy = blur(&prod(&iy, &iy), h, w, &kernel);

    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    let mut it = vec![0.0; h * w];
    for _ in 0..ITERATIONS {
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                it[k] = b.sample(x as f64 + u[k], y as f64 + v[k]) - a.data[k];
            }
        }
        let bx = blur(&prod(&ix, &it), h, w, &kernel);
        let by = blur(&prod(&iy, &it), h, w, &kernel);
        for k in 0..h * w {
            let det = sxx[k] * syy[k] - sxy[k] * sxy[k];
            if det > MIN_DET {
                u[k] += (-syy[k] * bx[k] + sxy[k] * by[k]) / det;
                v[k] += (sxy[k] * bx[k] - sxx[k] * by[k]) / det;
            }
        }
    }
    (u, v)
}

/// Mean flow magnitude (pixels per frame) for each consecutive frame pair,
/// averaged over pixels at least a few pixels away from the border.
pub fn optical_flow_magnitude(clip: &Clip) -> Result<Series> {
    if clip.n_frames < 3 {
        return Err(Error::InsufficientData(format!(
            "optical flow series needs at least 3 frames, got {}",
            clip.n_frames
        )));
    }
    let (h, w) = (clip.height, clip.width);
    let border = if h > 2 * BORDER + 2 && w > 2 * BORDER + 2 { BORDER } else { 0 };
    let mut out = Vec::with_capacity(clip.n_frames - 1);
    let mut prev = to_gray(clip.frame(0), h, w);
    for i in 1..clip.n_frames {
        let cur = to_gray(clip.frame(i), h, w);
        let (u, v) = dense_flow(&prev, &cur);
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in border..h - border {
            for x in border..w - border {
                let k = y * w + x;
                acc += (u[k] * u[k] + v[k] * v[k]).sqrt();
                count += 1;
            }
        }
        out.push(acc / count as f64);
        prev = cur;
    }
    Series::new(out, clip.fs, "px/frame")
}
