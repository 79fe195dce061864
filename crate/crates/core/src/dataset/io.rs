//! On-disk session layout:
//!
//! ```text
//! <session>/
//!   meta.json          participant id, skin type, sampling rates, pinch intervals
//!   face_video/        chunked u8 RGB frames + index.json
//!   eda.csv            t_s,eda_us
//!   ppg.csv            t_s,ppg
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frames::FrameSource;
use super::series::Series;
use super::session::{PinchInterval, Session};
use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_FRAMES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub participant_id: String,
    pub skin_type: Option<u8>,
    pub fs_video: f64,
    pub fs_eda: f64,
    pub fs_ppg: f64,
    pub pinch_intervals: Vec<(f64, f64)>,
}

pub fn write_series_csv(path: &Path, value_col: &str, s: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_s", value_col])?;
    for (t, v) in s.times().zip(s.values()) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column `t_s,<value_col>` file sampled at `fs`.
pub fn read_series_csv(path: &Path, value_col: &str, fs: f64, units: &str) -> Result<Series> {
    if !path.is_file() {
        return Err(Error::load(path, "file not found"));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e))?;
    let headers = r.headers().map_err(|e| Error::load(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "t_s" || &headers[1] != value_col {
        return Err(Error::load(path, format!("expected header t_s,{value_col}")));
    }
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::load(path, e))?;
        let t: f64 = rec[0].parse().map_err(|e| Error::load(path, format!("row {i}: {e}")))?;
        let v: f64 = rec[1].parse().map_err(|e| Error::load(path, format!("row {i}: {e}")))?;
        let expected = i as f64 / fs;
        if (t - expected).abs() > 0.5 / fs {
            return Err(Error::Integrity(format!(
                "{}: row {i} timestamp {t} does not match {fs} Hz sampling",
                path.display()
            )));
        }
        values.push(v);
    }
    Series::new(values, fs, units).map_err(|e| Error::load(path, e))
}

pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = SessionMeta {
        participant_id: session.participant_id.clone(),
        skin_type: session.skin_type,
        fs_video: session.face_frames.fs(),
        fs_eda: session.eda.fs(),
        fs_ppg: session.ppg.fs(),
        pinch_intervals: session.pinch_intervals.iter().map(|p| (p.start_s, p.end_s)).collect(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    session
        .face_frames
        .write_chunked(&dir.join("face_video"), DEFAULT_CHUNK_FRAMES)?;
    write_series_csv(&dir.join("eda.csv"), "eda_us", &session.eda)?;
    write_series_csv(&dir.join("ppg.csv"), "ppg", &session.ppg)?;
    Ok(())
}

/// Loads and validates a session directory. Frames stay on disk and are read
/// chunk by chunk on demand.
pub fn load_session(dir: &Path) -> Result<Session> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::load(&meta_path, e))?;
    let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| Error::load(&meta_path, e))?;
    let video_dir = dir.join("face_video");
    let frames = FrameSource::open_chunked(&video_dir)?;
    if (frames.fs() - meta.fs_video).abs() > 1e-9 {
        return Err(Error::Integrity(format!(
            "meta.json declares {} Hz video but index.json declares {} Hz",
            meta.fs_video,
            frames.fs()
        )));
    }
    let eda = read_series_csv(&dir.join("eda.csv"), "eda_us", meta.fs_eda, "uS")?;
    let ppg = read_series_csv(&dir.join("ppg.csv"), "ppg", meta.fs_ppg, "au")?;
    let pinch = meta
        .pinch_intervals
        .iter()
        .map(|&(a, b)| PinchInterval::new(a, b))
        .collect();
    Session::new(meta.participant_id, frames, eda, ppg, pinch, meta.skin_type)
}
