//! Face localisation and cropping.
//!
//! The default detector is a small rejection cascade over square windows of a
//! skin-chroma map, evaluated in constant time per window with an integral
//! image. Any other detector can be plugged in through [`FaceDetector`].

use serde::{Deserialize, Serialize};

use super::clip::{Clip, ClipOrigin};
use crate::dataset::{FrameGeometry, FrameSource, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn full(g: FrameGeometry) -> Self {
        Self {
            x: 0,
            y: 0,
            w: g.width,
            h: g.height,
        }
    }
}

pub trait FaceDetector: Sync {
    fn detect(&self, frame: &[u8], geometry: FrameGeometry) -> Option<BBox>;
}

/// Never finds a face; use together with a fallback box.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDetector;

impl FaceDetector for NoDetector {
    fn detect(&self, _frame: &[u8], _geometry: FrameGeometry) -> Option<BBox> {
        None
    }
}

impl<F> FaceDetector for F
where
    F: Fn(&[u8], FrameGeometry) -> Option<BBox> + Sync,
{
    fn detect(&self, frame: &[u8], geometry: FrameGeometry) -> Option<BBox> {
        self(frame, geometry)
    }
}

/// Skin-chroma rejection cascade.
#[derive(Debug, Clone, Copy)]
pub struct SkinCascadeDetector {
    pub min_size_frac: f64,
    pub min_skin_frac: f64,
    pub min_core_skin_frac: f64,
}

impl Default for SkinCascadeDetector {
    fn default() -> Self {
        Self {
            min_size_frac: 0.25,
            min_skin_frac: 0.5,
            min_core_skin_frac: 0.75,
        }
    }
}

fn is_skin(r: f64, g: f64, b: f64) -> bool {
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (77.0..=127.0).contains(&cb) && (133.0..=173.0).contains(&cr)
}

struct Integral {
    w: usize,
    data: Vec<u32>,
}

impl Integral {
    fn new(mask: &[bool], h: usize, w: usize) -> Self {
        let mut data = vec![0u32; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask[y * w + x] as u32;
                data[(y + 1) * (w + 1) + x + 1] = data[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w: w + 1, data }
    }

    fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> u32 {
        let at = |xx: usize, yy: usize| self.data[yy * self.w + xx];
        at(x + w, y + h) + at(x, y) - at(x + w, y) - at(x, y + h)
    }
}

impl FaceDetector for SkinCascadeDetector {
    fn detect(&self, frame: &[u8], g: FrameGeometry) -> Option<BBox> {
        let (h, w) = (g.height, g.width);
        let mask: Vec<bool> = frame
            .chunks_exact(CHANNELS)
            .map(|p| is_skin(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        let integral = Integral::new(&mask, h, w);
        let min_dim = h.min(w);
        let min_size = ((min_dim as f64 * self.min_size_frac).round() as usize).max(4);
        let mut best: Option<(i64, BBox)> = None;
        let mut size = min_dim;
        while size >= min_size {
            let step = (size / 12).max(1);
            let mut y = 0;
            while y + size <= h {
                let mut x = 0;
                while x + size <= w {
                    let area = (size * size) as u32;
                    let skin = integral.sum(x, y, size, size);
                    // stage 1: enough skin overall
                    if (skin as f64) >= self.min_skin_frac * area as f64 {
                        // stage 2: the central half is mostly skin
                        let q = size / 4;
                        let core = integral.sum(x + q, y + q, size - 2 * q, size - 2 * q);
                        let core_area = ((size - 2 * q) * (size - 2 * q)) as f64;
                        if core as f64 >= self.min_core_skin_frac * core_area {
                            // stage 3: score skin captured minus background included
                            let score = 2 * skin as i64 - area as i64;
                            if best.map_or(true, |(s, _)| score > s) {
                                best = Some((score, BBox { x, y, w: size, h: size }));
                            }
                        }
                    }
                    x += step;
                }
                y += step;
            }
            size = ((size as f64) * 0.9).floor() as usize;
        }
        best.map(|(_, b)| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    pub output_size: usize,
    pub redetect_interval_s: f64,
    /// Box used when the detector never fires.
    pub fallback: Option<BBox>,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            output_size: 72,
            redetect_interval_s: 1.0,
            fallback: None,
        }
    }
}

/// Bilinear resize of the `bbox` region of an interleaved RGB frame into `out`
/// (`size * size * 3`). Sample positions are clamped to the box.
pub fn crop_resize(frame: &[u8], g: FrameGeometry, bbox: BBox, size: usize, out: &mut [f32]) {
    let sx = bbox.w as f64 / size as f64;
    let sy = bbox.h as f64 / size as f64;
    let max_x = (bbox.x + bbox.w).min(g.width) - 1;
    let max_y = (bbox.y + bbox.h).min(g.height) - 1;
    for oy in 0..size {
        let fy = (bbox.y as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(bbox.y as f64, max_y as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(max_y);
        let wy = fy - y0 as f64;
        for ox in 0..size {
            let fx = (bbox.x as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(bbox.x as f64, max_x as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(max_x);
            let wx = fx - x0 as f64;
            for c in 0..CHANNELS {
                let p = |x: usize, y: usize| frame[(y * g.width + x) * CHANNELS + c] as f64;
                let v = (1.0 - wy) * ((1.0 - wx) * p(x0, y0) + wx * p(x1, y0))
                    + wy * ((1.0 - wx) * p(x0, y1) + wx * p(x1, y1));
                out[(oy * size + ox) * CHANNELS + c] = v as f32;
            }
        }
    }
}

/// Crops the face in every frame listed in `indices` (all frames when `None`).
///
/// The detector runs on the first frame and then once per
/// `redetect_interval_s`; in between, and whenever a detection fails, the last
/// box is reused. Frames before the first successful detection use that first
/// box. If no detection succeeds anywhere, the configured fallback is used, or
/// a detection error is returned.
pub fn detect_and_crop_face(
    frames: &FrameSource,
    detector: &dyn FaceDetector,
    cfg: &CropConfig,
    indices: Option<&[usize]>,
    session_id: &str,
) -> Result<Clip> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..frames.len()).collect();
            &all
        }
    };
    let g = frames.geometry();
    let interval = ((cfg.redetect_interval_s * frames.fs()).round() as usize).max(1);
    let mut buf = vec![0u8; g.frame_len()];

    // Detection pass at the re-detection cadence.
    let mut detections: Vec<(usize, BBox)> = Vec::new();
    let mut next_detect = 0usize;
    for &i in indices {
        if i >= next_detect {
            frames.read_frame_into(i, &mut buf)?;
            if let Some(b) = detector.detect(&buf, g) {
                detections.push((i, b));
            }
            next_detect = (i / interval + 1) * interval;
        }
    }
    let first_box = match detections.first() {
        Some(&(_, b)) => b,
        None => cfg.fallback.ok_or_else(|| {
            Error::Detection(format!("no face found in any of {} probed frames", indices.len()))
        })?,
    };

    let size = cfg.output_size;
    let fl = size * size * CHANNELS;
    let mut out = vec![0f32; indices.len() * fl];
    let mut current = first_box;
    let mut di = 0;
    for (k, &i) in indices.iter().enumerate() {
        while di < detections.len() && detections[di].0 <= i {
            current = detections[di].1;
            di += 1;
        }
        frames.read_frame_into(i, &mut buf)?;
        crop_resize(&buf, g, current, size, &mut out[k * fl..(k + 1) * fl]);
    }
    Clip::new(
        out,
        size,
        size,
        frames.fs(),
        ClipOrigin {
            session_id: session_id.to_string(),
            start_index: indices.first().copied().unwrap_or(0),
        },
    )
}
