use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled physiological signal. Sample `i` sits at `i / fs` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: Vec<f64>,
    fs: f64,
    units: String,
}

impl Series {
    pub fn new(values: Vec<f64>, fs: f64, units: impl Into<String>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if values.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "series needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            values,
            fs,
            units: units.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.fs
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| i as f64 / self.fs)
    }

    /// Samples whose timestamps fall in `[start_s, end_s)`.
    pub fn slice_time(&self, start_s: f64, end_s: f64) -> &[f64] {
        let (a, b) = self.index_range(start_s, end_s);
        &self.values[a..b]
    }

    pub fn index_range(&self, start_s: f64, end_s: f64) -> (usize, usize) {
        let n = self.values.len();
        let a = ((start_s * self.fs).ceil().max(0.0) as usize).min(n);
        let b = ((end_s * self.fs).ceil().max(0.0) as usize).min(n);
        (a, b.max(a))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Series> {
        Series::new(self.values.iter().map(|&v| f(v)).collect(), self.fs, self.units.clone())
    }

    /// Linear-interpolation resample to `fs_out`, covering the same duration.
    pub fn resample(&self, fs_out: f64) -> Result<Series> {
        let n_out = ((self.duration_s() * fs_out).round() as usize).max(2);
        Series::new(
            crate::signal::resample_linear(&self.values, self.fs, fs_out, n_out),
            fs_out,
            self.units.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(Series::new(vec![1.0, 2.0], 0.0, "uS").is_err());
        assert!(Series::new(vec![1.0], 4.0, "uS").is_err());
        assert!(Series::new(vec![1.0, f64::NAN], 4.0, "uS").is_err());
    }

    #[test]
    fn slicing_by_time() {
        let s = Series::new((0..40).map(|i| i as f64).collect(), 4.0, "uS").unwrap();
        assert_eq!(s.slice_time(1.0, 2.0), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(s.duration_s(), 10.0);
    }
}
