//! Physical-stress detection from 30 s windows of an arousal trace and a pulse
//! trace: protocol windowing, heart-rate and EDA features, and a
//! gradient-boosting classifier evaluated leave-one-subject-out.

mod classify;
mod gbdt;
mod peaks;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{
    always_rest, balanced_accuracy, classify_stress, f1_positive, markdown_stress_table, FeatureSet, StressFold,
    StressPrediction, StressReport,
};
pub use gbdt::{GbdtConfig, GradientBoosting};
pub use peaks::{detect_peaks, PULSE_BAND_HZ, REFRACTORY_S};

use crate::dataset::{PinchInterval, Series, Session};
use crate::preprocess::{detect_and_crop_face, CropConfig, FaceDetector};
use crate::error::{Error, Result};
use crate::signal;

pub const WINDOW_S: f64 = 30.0;
pub const PROTOCOL_DURATION_S: f64 = 570.0;
pub const WINDOWS_PER_SESSION: usize = 19;
const DURATION_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressLabel {
    Rest,
    Stress,
}

impl StressLabel {
    pub fn is_stress(self) -> bool {
        self == StressLabel::Stress
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StressLabel::Rest => "rest",
            StressLabel::Stress => "stress",
        }
    }
}

/// One 30 s slice of a session with the signals it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct StressWindow {
    pub participant_id: String,
    pub index: usize,
    pub start_s: f64,
    pub duration_s: f64,
    pub label: StressLabel,
    pub eda: Vec<f64>,
    pub eda_fs: f64,
    pub ppg: Vec<f64>,
    pub ppg_fs: f64,
}

/// Splits a protocol session into its 19 windows using the contact signals.
pub fn window_session(session: &Session) -> Result<Vec<StressWindow>> {
    window_signals(
        &session.participant_id,
        session.duration_s(),
        &session.eda,
        &session.ppg,
        &session.pinch_intervals,
    )
}

/// Windows arbitrary arousal and pulse traces (e.g. camera estimates) on the
/// protocol grid. A window is labelled stress when at least half of it lies
/// inside a pinch interval.
pub fn window_signals(
    participant_id: &str,
    duration_s: f64,
    eda: &Series,
    ppg: &Series,
    pinches: &[PinchInterval],
) -> Result<Vec<StressWindow>> {
    if (duration_s - PROTOCOL_DURATION_S).abs() > DURATION_TOLERANCE_S {
        return Err(Error::Protocol(format!(
            "{participant_id}: session lasts {duration_s:.1} s, protocol needs {PROTOCOL_DURATION_S} ± {DURATION_TOLERANCE_S} s"
        )));
    }
    Ok((0..WINDOWS_PER_SESSION)
        .map(|k| {
            let start = k as f64 * WINDOW_S;
            let end = start + WINDOW_S;
            let overlap: f64 = pinches
                .iter()
                .map(|p| (p.end_s.min(end) - p.start_s.max(start)).max(0.0))
                .sum();
            StressWindow {
                participant_id: participant_id.to_string(),
                index: k,
                start_s: start,
                duration_s: WINDOW_S,
                label: if overlap >= WINDOW_S / 2.0 {
                    StressLabel::Stress
                } else {
                    StressLabel::Rest
                },
                eda: eda.slice_time(start, end).to_vec(),
                eda_fs: eda.fs(),
                ppg: ppg.slice_time(start, end).to_vec(),
                ppg_fs: ppg.fs(),
            }
        })
        .collect())
}

/// Camera pulse trace: mean green value of the tracked face crop at the native
/// video rate.
pub fn camera_pulse(session: &Session, detector: &dyn FaceDetector, crop: &CropConfig) -> Result<Series> {
    let clip = detect_and_crop_face(&session.face_frames, detector, crop, None, &session.participant_id)?;
    Series::new(clip.channel_means(1), clip.fs, "au")
}

/// Heart-rate features; rates in beats per minute, SDNN in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrFeatures {
    pub mu_hr: f64,
    pub min_hr: f64,
    pub max_hr: f64,
    /// Mean absolute change between consecutive instantaneous rates.
    pub mu_hr_change: f64,
    pub sdnn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdaFeatures {
    pub mu: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    /// Mean signed change per sample.
    pub mu_change: f64,
}

pub const FEATURE_NAMES: [&str; 10] = [
    "mu_hr",
    "min_hr",
    "max_hr",
    "mu_hr_change",
    "sdnn",
    "mu_eda",
    "sigma_eda",
    "min_eda",
    "max_eda",
    "mu_eda_change",
];

/// Ten window features; a family is `None` when its signal was unusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressFeatureVector {
    pub participant_id: String,
    pub window_index: usize,
    pub label: StressLabel,
    pub hr: Option<HrFeatures>,
    pub eda: Option<EdaFeatures>,
}

impl StressFeatureVector {
    /// Features in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 10] {
        let h = self.hr.map(|h| [h.mu_hr, h.min_hr, h.max_hr, h.mu_hr_change, h.sdnn]);
        let e = self.eda.map(|e| [e.mu, e.sigma, e.min, e.max, e.mu_change]);
        let mut out = [None; 10];
        for i in 0..5 {
            out[i] = h.map(|v| v[i]);
            out[5 + i] = e.map(|v| v[i]);
        }
        out
    }
}

pub fn hr_features(nn: &[f64]) -> Result<HrFeatures> {
    if nn.is_empty() {
        return Err(Error::InsufficientPeaks { found: 0 });
    }
    let hr: Vec<f64> = nn.iter().map(|v| 60.0 / v).collect();
    let change = signal::diff(&hr);
    Ok(HrFeatures {
        mu_hr: signal::mean(&hr),
        min_hr: hr.iter().cloned().fold(f64::INFINITY, f64::min),
        max_hr: hr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mu_hr_change: if change.is_empty() {
            0.0
        } else {
            change.iter().map(|c| c.abs()).sum::<f64>() / change.len() as f64
        },
        sdnn: signal::std(nn),
    })
}

pub fn eda_features(eda: &[f64]) -> Result<EdaFeatures> {
    if eda.len() < 2 {
        return Err(Error::InsufficientData(format!("{} EDA samples in window", eda.len())));
    }
    if eda.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("EDA window contains non-finite samples".into()));
    }
    Ok(EdaFeatures {
        mu: signal::mean(eda),
        sigma: signal::std(eda),
        min: eda.iter().cloned().fold(f64::INFINITY, f64::min),
        max: eda.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mu_change: signal::mean(&signal::diff(eda)),
    })
}

/// Features of one window. Too few pulse peaks or EDA samples mark that
/// family missing instead of failing.
pub fn extract_features(window: &StressWindow) -> Result<StressFeatureVector> {
    let hr = match detect_peaks(&window.ppg, window.ppg_fs).and_then(|nn| hr_features(&nn)) {
        Ok(h) => Some(h),
        Err(Error::InsufficientPeaks { found }) => {
            log::debug!(
                "{} window {}: {found} pulse peaks, HR features missing",
                window.participant_id,
                window.index
            );
            None
        }
        Err(e) => return Err(e),
    };
    let eda = match eda_features(&window.eda) {
        Ok(e) => Some(e),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(StressFeatureVector {
        participant_id: window.participant_id.clone(),
        window_index: window.index,
        label: window.label,
        hr,
        eda,
    })
}

pub fn session_features(session: &Session) -> Result<Vec<StressFeatureVector>> {
    window_session(session)?.iter().map(extract_features).collect()
}

/// Columns: participant, window_idx, label, then [`FEATURE_NAMES`]; missing values are empty.
pub fn write_features_csv(path: &Path, rows: &[StressFeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["participant", "window_idx", "label"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.participant_id.clone(), r.window_index.to_string(), r.label.as_str().into()];
        rec.extend(r.values().iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<StressFeatureVector>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::load(path, format!("row {}: {m}", out.len() + 1));
        if rec.len() != 13 {
            return Err(bad("expected 13 columns"));
        }
        let label = match &rec[2] {
            "rest" => StressLabel::Rest,
            "stress" => StressLabel::Stress,
            _ => return Err(bad("label must be rest or stress")),
        };
        let mut v = [None; 10];
        for (i, slot) in v.iter_mut().enumerate() {
            let s = &rec[3 + i];
            if !s.is_empty() {
                *slot = Some(s.parse::<f64>().map_err(|_| bad("unparseable feature"))?);
            }
        }
        let family = |o: usize| -> Result<Option<[f64; 5]>> {
            let got: Vec<f64> = v[o..o + 5].iter().flatten().copied().collect();
            match got.len() {
                0 => Ok(None),
                5 => Ok(Some([got[0], got[1], got[2], got[3], got[4]])),
                _ => Err(bad("partially missing feature family")),
            }
        };
        out.push(StressFeatureVector {
            participant_id: rec[0].to_string(),
            window_index: rec[1].parse().map_err(|_| bad("bad window index"))?,
            label,
            hr: family(0)?.map(|h| HrFeatures {
                mu_hr: h[0],
                min_hr: h[1],
                max_hr: h[2],
                mu_hr_change: h[3],
                sdnn: h[4],
            }),
            eda: family(5)?.map(|e| EdaFeatures {
                mu: e[0],
                sigma: e[1],
                min: e[2],
                max: e[3],
                mu_change: e[4],
            }),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::protocol_pinch_intervals;

    fn series(v: Vec<f64>, fs: f64) -> Series {
        Series::new(v, fs, "au").unwrap()
    }

    fn protocol_windows(pinches: &[PinchInterval]) -> Vec<StressWindow> {
        let eda = series(vec![1.0; 570 * 4], 4.0);
        let ppg = series(vec![0.0; 570 * 50], 50.0);
        window_signals("p", 570.0, &eda, &ppg, pinches).unwrap()
    }

    fn stress_indices(w: &[StressWindow]) -> Vec<usize> {
        w.iter().filter(|w| w.label.is_stress()).map(|w| w.index).collect()
    }

    #[test]
    fn protocol_grid() {
        let w = protocol_windows(&protocol_pinch_intervals());
        assert_eq!(w.len(), 19);
        assert_eq!(stress_indices(&w), vec![4, 9, 14]);
        assert!(w.iter().all(|w| w.eda.len() == 120 && w.ppg.len() == 1500));
        let shifted: Vec<PinchInterval> = protocol_pinch_intervals()
            .iter()
            .map(|p| PinchInterval::new(p.start_s + 30.0, p.end_s + 30.0))
            .collect();
        assert_eq!(stress_indices(&protocol_windows(&shifted)), vec![5, 10, 15]);
    }

    #[test]
    fn wrong_duration_rejected() {
        let eda = series(vec![1.0; 600 * 4], 4.0);
        let ppg = series(vec![0.0; 600 * 50], 50.0);
        assert!(matches!(
            window_signals("p", 600.0, &eda, &ppg, &[]),
            Err(Error::Protocol(_))
        ));
        assert!(window_signals("p", 570.8, &eda, &ppg, &[]).is_ok());
    }

    #[test]
    fn eda_feature_arithmetic() {
        let c = eda_features(&[5.0; 120]).unwrap();
        assert_eq!((c.mu, c.sigma, c.min, c.max, c.mu_change), (5.0, 0.0, 5.0, 5.0, 0.0));
        let ramp: Vec<f64> = (0..120).map(|i| 1.0 + i as f64 / 119.0).collect();
        let r = eda_features(&ramp).unwrap();
        assert!((r.mu_change - 1.0 / 119.0).abs() < 1e-15);
        assert_eq!((r.min, r.max), (1.0, 2.0));
        let shifted: Vec<f64> = ramp.iter().map(|v| v + 3.0).collect();
        let s = eda_features(&shifted).unwrap();
        assert!((s.mu - r.mu - 3.0).abs() < 1e-12);
        assert!((s.sigma - r.sigma).abs() < 1e-12 && (s.mu_change - r.mu_change).abs() < 1e-12);
    }

    #[test]
    fn hr_feature_arithmetic() {
        let h = hr_features(&[1.0, 0.5, 1.0]).unwrap();
        assert_eq!((h.mu_hr, h.min_hr, h.max_hr, h.mu_hr_change), (80.0, 60.0, 120.0, 60.0));
        assert!((h.sdnn - (1.0f64 / 18.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flat_pulse_marks_hr_missing() {
        let w = &protocol_windows(&protocol_pinch_intervals())[0];
        let f = extract_features(w).unwrap();
        assert!(f.hr.is_none() && f.eda.is_some());
        assert_eq!(f.values().iter().filter(|v| v.is_none()).count(), 5);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            StressFeatureVector {
                participant_id: "a".into(),
                window_index: 3,
                label: StressLabel::Stress,
                hr: Some(hr_features(&[0.8, 0.9]).unwrap()),
                eda: Some(eda_features(&[1.0, 1.5, 1.25]).unwrap()),
            },
            StressFeatureVector {
                participant_id: "b".into(),
                window_index: 0,
                label: StressLabel::Rest,
                hr: None,
                eda: Some(eda_features(&[2.0, 2.0]).unwrap()),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_features_csv(&p, &rows).unwrap();
        assert_eq!(read_features_csv(&p).unwrap(), rows);
    }
}
