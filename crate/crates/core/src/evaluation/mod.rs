//! Per-participant evaluation of predicted arousal, the pulse-amplitude
//! baseline and the facial-motion probe.
//!
//! The network predicts standardised first differences. Window outputs are
//! stitched in time order, integrated with a cumulative sum and rank-correlated
//! with the EDA trace at the matching frames.

mod baseline;
mod plot;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use baseline::{baseline_bpa, BpaConfig, BpaEnvelope};
pub use plot::write_trend_svg;

use crate::dataset::Series;
use crate::eda::spearman;
use crate::error::{Error, Result};
use crate::preprocess::{optical_flow_magnitude, Clip, PreparedSession, TargetKind};
use crate::signal;

/// EDA traces of one participant at model frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTargets {
    pub participant_id: String,
    pub fs: f64,
    pub eda_raw: Vec<f64>,
    pub eda_tonic: Vec<f64>,
}

impl From<&PreparedSession> for EvalTargets {
    fn from(p: &PreparedSession) -> Self {
        Self {
            participant_id: p.session_id.clone(),
            fs: p.clip.fs,
            eda_raw: p.eda_raw.clone(),
            eda_tonic: p.eda_tonic.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub participant_id: String,
    pub window_t: usize,
    pub target_kind: TargetKind,
    pub rho_raw: f64,
    pub rho_tonic: f64,
    /// `None` when the flow series is flat and the correlation is undefined.
    pub rho_motion: Option<f64>,
}

/// Concatenates window predictions given as `(start_frame, values)`.
///
/// Windows must tile the recording from frame 0 without gaps or overlap.
pub fn stitch(windows: &[(usize, Vec<f64>)]) -> Result<Vec<f64>> {
    let mut sorted: Vec<&(usize, Vec<f64>)> = windows.iter().collect();
    sorted.sort_by_key(|w| w.0);
    let mut out = Vec::new();
    for (start, values) in sorted {
        if *start != out.len() {
            return Err(Error::Alignment(format!(
                "window starting at frame {start} does not follow frame {}",
                out.len()
            )));
        }
        out.extend_from_slice(values);
    }
    Ok(out)
}

/// Cumulative prediction at frames `1..=n`.
pub fn trend(predictions: &[f64]) -> Vec<f64> {
    signal::cumsum(predictions)
}

/// Spearman correlation of the integrated prediction with raw and tonic EDA.
///
/// `predictions[i]` estimates the change from frame `i` to frame `i + 1`, so
/// the trend is compared with targets `1..=n`.
pub fn evaluate_participant(
    predictions: &[f64],
    targets: &EvalTargets,
    window_t: usize,
    target_kind: TargetKind,
) -> Result<EvalResult> {
    let n = predictions.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{}: {n} predictions, need at least 3",
            targets.participant_id
        )));
    }
    if targets.eda_raw.len() < n + 1 || targets.eda_tonic.len() < n + 1 {
        return Err(Error::Alignment(format!(
            "{}: {n} predictions exceed the {} recorded frames",
            targets.participant_id,
            targets.eda_raw.len().min(targets.eda_tonic.len())
        )));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{}: non-finite prediction", targets.participant_id)));
    }
    if predictions.iter().all(|&v| v == predictions[0]) {
        return Err(Error::UndefinedCorrelation(format!(
            "{}: constant prediction",
            targets.participant_id
        )));
    }
    let tr = trend(predictions);
    Ok(EvalResult {
        participant_id: targets.participant_id.clone(),
        window_t,
        target_kind,
        rho_raw: spearman(&tr, &targets.eda_raw[1..=n])?,
        rho_tonic: spearman(&tr, &targets.eda_tonic[1..=n])?,
        rho_motion: None,
    })
}

/// Spearman correlation between the integrated prediction and the optical-flow
/// magnitude of `clip`.
pub fn motion_probe(predictions: &[f64], fs_pred: f64, clip: &Clip) -> Result<f64> {
    motion_correlation(predictions, fs_pred, &optical_flow_magnitude(clip)?)
}

/// Same as [`motion_probe`] for a precomputed flow series.
///
/// Flow sample `i` covers frames `i..i + 1` and is interpolated onto the
/// prediction timestamps `(i + 1) / fs_pred`.
pub fn motion_correlation(predictions: &[f64], fs_pred: f64, flow: &Series) -> Result<f64> {
    let dt = 1.0 / flow.fs();
    let times: Vec<f64> = (1..=predictions.len()).map(|i| i as f64 / fs_pred - dt).collect();
    let last = (flow.len() - 1) as f64 * dt;
    if times.last().is_some_and(|&t| t > last + 1e-9) {
        return Err(Error::Alignment(format!(
            "{} predictions at {fs_pred} Hz extend past the {:.1} s flow series",
            predictions.len(),
            flow.duration_s()
        )));
    }
    let flow_at = signal::interp_at(flow.values(), flow.fs(), &times);
    spearman(&trend(predictions), &flow_at)
}

impl EvalResult {
    /// Attaches the motion correlation, mapping an undefined correlation to `None`.
    pub fn with_motion(mut self, rho: Result<f64>) -> Result<Self> {
        self.rho_motion = match rho {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(self)
    }
}

pub fn write_results_csv(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EvalResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
