use crate::error::{Error, Result};

/// Dense 5-D activation tensor laid out as `(N, C, T, H, W)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn t(&self) -> usize {
        self.shape[2]
    }

    /// Elements in one `(T, H, W)` channel volume.
    pub fn volume(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn plane(&self) -> usize {
        self.shape[3] * self.shape[4]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.volume()
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn at(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> f64 {
        let [_, cc, tt, hh, ww] = self.shape;
        self.data[(((n * cc + c) * tt + t) * hh + h) * ww + w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
