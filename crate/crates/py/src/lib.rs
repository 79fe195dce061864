//! Python bindings: sessions, the arousal network, EDA decomposition, rank
//! correlation, LOSO splits and stress classification.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use remote_arousal::dataset::{self, Series, SynthConfig};
use remote_arousal::model::{self, ModelConfig, Tensor};
use remote_arousal::stress::{self, FeatureSet, GbdtConfig, FEATURE_NAMES};
use remote_arousal::{eda, preprocess, training, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Domain(_) | Error::InsufficientData(_) | Error::SingleClass => {
            PyValueError::new_err(e.to_string())
        }
        Error::Load { .. } | Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A recording session: face video, contact EDA and PPG, pinch intervals.
#[pyclass(module = "remote_arousal")]
struct Session {
    inner: dataset::Session,
}

#[pymethods]
impl Session {
    /// Synthetic session with a known arousal signal painted into the video.
    #[staticmethod]
    #[pyo3(signature = (seed, duration_s = 570.0, frame_size = 48, fs_video = 10.0))]
    fn synthetic(seed: u64, duration_s: f64, frame_size: usize, fs_video: f64) -> PyResult<Self> {
        let cfg = SynthConfig {
            duration_s,
            frame_size,
            fs_video,
            ..SynthConfig::default()
        };
        let inner = dataset::generate_synthetic_session(&cfg, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_session(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataset::save_session(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn participant_id(&self) -> String {
        self.inner.participant_id.clone()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.face_frames.len()
    }

    #[getter]
    fn fs_video(&self) -> f64 {
        self.inner.face_frames.fs()
    }

    #[getter]
    fn eda(&self) -> Vec<f64> {
        self.inner.eda.values().to_vec()
    }

    #[getter]
    fn eda_fs(&self) -> f64 {
        self.inner.eda.fs()
    }

    #[getter]
    fn ppg(&self) -> Vec<f64> {
        self.inner.ppg.values().to_vec()
    }

    #[getter]
    fn ppg_fs(&self) -> f64 {
        self.inner.ppg.fs()
    }

    #[getter]
    fn pinch_intervals(&self) -> Vec<(f64, f64)> {
        self.inner.pinch_intervals.iter().map(|p| (p.start_s, p.end_s)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Session('{}', {:.1} s, {} frames)",
            self.inner.participant_id,
            self.inner.duration_s(),
            self.inner.face_frames.len()
        )
    }
}

/// The temporal-attention 3D CNN.
#[pyclass(module = "remote_arousal")]
struct Model {
    inner: model::Model,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (t = 768, reduction = 16, widths = (16, 32, 64), input_size = 72, seed = 0))]
    fn new(t: usize, reduction: usize, widths: (usize, usize, usize), input_size: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig {
            t,
            reduction,
            widths: [widths.0, widths.1, widths.2],
            input_size,
            init_seed: seed,
        };
        Ok(Self {
            inner: model::build_model(&cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.config().t
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.config().input_size
    }

    /// `(total, attention)` parameter counts.
    fn parameter_count(&self) -> (usize, usize) {
        let c = self.inner.count_parameters();
        (c.total, c.attention())
    }

    /// Input shape `(N, C, T, H, W)` for a batch of `batch` clips.
    fn input_shape(&self, batch: usize) -> (usize, usize, usize, usize, usize) {
        let s = self.inner.input_shape(batch);
        (s[0], s[1], s[2], s[3], s[4])
    }

    /// Inference on a flat row-major `(N, C, T, H, W)` buffer; one list of T
    /// predicted differences per clip.
    fn forward(&self, py: Python<'_>, data: Vec<f64>, batch: usize) -> PyResult<Vec<Vec<f64>>> {
        let x = Tensor::from_vec(self.inner.input_shape(batch), data).map_err(py_err)?;
        py.detach(|| self.inner.forward(&x)).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(t={}, reduction={}, widths={:?}, input_size={})",
            c.t, c.reduction, c.widths, c.input_size
        )
    }
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    eda::spearman(&a, &b).map_err(py_err)
}

/// Tonic/phasic split; returns `(fs, tonic, phasic, residual)` at the solver rate.
#[pyfunction]
fn decompose_tonic(values: Vec<f64>, fs: f64) -> PyResult<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = eda::decompose_tonic(&Series::new(values, fs, "uS").map_err(py_err)?).map_err(py_err)?;
    Ok((
        d.tonic.fs(),
        d.tonic.into_values(),
        d.phasic.into_values(),
        d.residual.into_values(),
    ))
}

#[pyfunction]
fn diff_normalize_signal(values: Vec<f64>) -> PyResult<Vec<f64>> {
    preprocess::diff_normalize_signal(&values).map_err(py_err)
}

/// NN intervals (seconds) of a pulse trace.
#[pyfunction]
fn detect_peaks(ppg: Vec<f64>, fs: f64) -> PyResult<Vec<f64>> {
    stress::detect_peaks(&ppg, fs).map_err(py_err)
}

/// `(test, validation, train)` participant ids per fold.
#[pyfunction]
fn loso_splits(ids: Vec<String>) -> PyResult<Vec<(String, String, Vec<String>)>> {
    Ok(training::loso_splits(&ids)
        .map_err(py_err)?
        .into_iter()
        .map(|f| (f.test_id, f.val_id, f.train_ids))
        .collect())
}

/// One dict per protocol window with the label and the ten features (None when missing).
#[pyfunction]
fn stress_features<'py>(py: Python<'py>, session: &Session) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = stress::session_features(&session.inner).map_err(py_err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("participant", &r.participant_id)?;
            d.set_item("window_idx", r.window_index)?;
            d.set_item("label", r.label.as_str())?;
            for (name, v) in FEATURE_NAMES.iter().zip(r.values()) {
                d.set_item(*name, v)?;
            }
            Ok(d)
        })
        .collect()
}

/// LOSO gradient boosting on contact features; returns `(bacc, f1)`.
#[pyfunction]
#[pyo3(signature = (sessions, feature_set = "eda_only", rounds = 100))]
fn classify_stress(py: Python<'_>, sessions: Vec<PyRef<'_, Session>>, feature_set: &str, rounds: usize) -> PyResult<(f64, f64)> {
    let set: FeatureSet = feature_set.parse().map_err(py_err)?;
    let sessions: Vec<dataset::Session> = sessions.iter().map(|s| s.inner.clone()).collect();
    let cfg = GbdtConfig {
        rounds,
        ..GbdtConfig::default()
    };
    py.detach(|| {
        let mut rows = Vec::new();
        for s in &sessions {
            rows.extend(stress::session_features(s)?);
        }
        let r = stress::classify_stress(&rows, set, &cfg)?;
        Ok((r.bacc, r.f1))
    })
    .map_err(py_err)
}

#[pyfunction]
fn balanced_accuracy(truth: Vec<bool>, pred: Vec<bool>) -> PyResult<f64> {
    stress::balanced_accuracy(&truth, &pred).map_err(py_err)
}

#[pymodule(name = "remote_arousal")]
fn arousal_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Session>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_tonic, m)?)?;
    m.add_function(wrap_pyfunction!(diff_normalize_signal, m)?)?;
    m.add_function(wrap_pyfunction!(detect_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(loso_splits, m)?)?;
    m.add_function(wrap_pyfunction!(stress_features, m)?)?;
    m.add_function(wrap_pyfunction!(classify_stress, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    Ok(())
}
