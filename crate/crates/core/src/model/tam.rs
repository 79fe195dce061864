//! Temporal attention: a length-T' sigmoid gate computed from the feature map
//! and broadcast over channels and space.
//!
//! Spatial average pooling gives `(C, T')`, a 1x1x1 convolution collapses the
//! channels to a length-T' vector, and a bottleneck MLP (ReLU, reduction `r`)
//! followed by a sigmoid produces the attention weights.

use rand::Rng;

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-sample attention weights, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tam {
    pub channels: usize,
    pub t: usize,
    pub hidden: usize,
    /// 1x1x1 convolution, shape `(1, C, 1, 1, 1)`.
    pub conv_w: Param,
    pub conv_b: Param,
    /// `(hidden, T')`
    pub fc1_w: Param,
    pub fc1_b: Param,
    /// `(T', hidden)`
    pub fc2_w: Param,
    pub fc2_b: Param,
}

#[derive(Debug, Clone)]
pub struct TamCache {
    input: Tensor,
    pooled: Vec<f64>,
    z: Vec<f64>,
    hidden: Vec<f64>,
    attn: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `F_out[n, c, t, h, w] = A_n[t] * F_in[n, c, t, h, w]`.
pub fn apply_attention(f_in: &Tensor, attention: &[AttentionMap]) -> Result<Tensor> {
    let [n, c, t, _, _] = f_in.shape;
    if attention.len() != n || attention.iter().any(|a| a.weights.len() != t) {
        return Err(Error::Shape(format!(
            "attention for {} samples does not match feature map {:?}",
            attention.len(),
            f_in.shape
        )));
    }
    let p = f_in.plane();
    let mut out = f_in.clone();
    for (k, row) in out.data.chunks_exact_mut(p).enumerate() {
        let a = attention[k / (c * t)].weights[k % t];
        row.iter_mut().for_each(|v| *v *= a);
    }
    Ok(out)
}

impl Tam {
    pub fn new(name: &str, channels: usize, t: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || t % reduction != 0 || t < reduction {
            return Err(Error::Config(format!(
                "temporal length {t} is not divisible by reduction {reduction}"
            )));
        }
        let hidden = t / reduction;
        let bc = 1.0 / (channels as f64).sqrt();
        let b1 = 1.0 / (t as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            channels,
            t,
            hidden,
            conv_w: Param::uniform(format!("{name}.conv.weight"), vec![1, channels, 1, 1, 1], bc, rng),
            conv_b: Param::uniform(format!("{name}.conv.bias"), vec![1], bc, rng),
            fc1_w: Param::uniform(format!("{name}.fc1.weight"), vec![hidden, t], b1, rng),
            fc1_b: Param::uniform(format!("{name}.fc1.bias"), vec![hidden], b1, rng),
            fc2_w: Param::uniform(format!("{name}.fc2.weight"), vec![t, hidden], b2, rng),
            fc2_b: Param::uniform(format!("{name}.fc2.bias"), vec![t], b2, rng),
        })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels || x.t() != self.t {
            return Err(Error::Shape(format!(
                "attention block expects C = {}, T' = {}, got {:?}",
                self.channels, self.t, x.shape
            )));
        }
        Ok(())
    }

    fn compute(&self, x: &Tensor) -> TamCache {
        let [n, c, t, _, _] = x.shape;
        let pooled: Vec<f64> = x
            .data
            .chunks_exact(x.plane())
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect();
        let mut z = vec![0.0; n * t];
        let mut hidden = vec![0.0; n * self.hidden];
        let mut attn = vec![0.0; n * t];
        for s in 0..n {
            let zs = &mut z[s * t..(s + 1) * t];
            for (ti, zv) in zs.iter_mut().enumerate() {
                *zv = self.conv_b.value[0]
                    + (0..c).map(|ci| self.conv_w.value[ci] * pooled[(s * c + ci) * t + ti]).sum::<f64>();
            }
            for j in 0..self.hidden {
                let w = &self.fc1_w.value[j * t..(j + 1) * t];
                let pre = self.fc1_b.value[j] + w.iter().zip(zs.iter()).map(|(a, b)| a * b).sum::<f64>();
                hidden[s * self.hidden + j] = pre.max(0.0);
            }
            let hs = &hidden[s * self.hidden..(s + 1) * self.hidden];
            for ti in 0..t {
                let w = &self.fc2_w.value[ti * self.hidden..(ti + 1) * self.hidden];
                let logit = self.fc2_b.value[ti] + w.iter().zip(hs).map(|(a, b)| a * b).sum::<f64>();
                attn[s * t + ti] = sigmoid(logit);
            }
        }
        TamCache {
            input: x.clone(),
            pooled,
            z,
            hidden,
            attn,
        }
    }

    fn maps(&self, attn: &[f64]) -> Vec<AttentionMap> {
        attn.chunks_exact(self.t)
            .map(|w| AttentionMap { weights: w.to_vec() })
            .collect()
    }

    /// Gated feature map and the attention weights of every sample.
    pub fn forward(&self, f_in: &Tensor) -> Result<(Tensor, Vec<AttentionMap>)> {
        self.check(f_in)?;
        let cache = self.compute(f_in);
        let maps = self.maps(&cache.attn);
        Ok((apply_attention(f_in, &maps)?, maps))
    }

    pub fn forward_train(&self, f_in: &Tensor) -> Result<(Tensor, TamCache)> {
        self.check(f_in)?;
        let cache = self.compute(f_in);
        let out = apply_attention(f_in, &self.maps(&cache.attn))?;
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &TamCache, dy: &Tensor) -> Tensor {
        let x = &cache.input;
        let [n, c, t, _, _] = x.shape;
        let p = x.plane();
        let hd = self.hidden;
        let mut dx = Tensor::zeros(x.shape);
        let mut da = vec![0.0; n * t];
        for (k, (dxr, (xr, gr))) in dx
            .data
            .chunks_exact_mut(p)
            .zip(x.data.chunks_exact(p).zip(dy.data.chunks_exact(p)))
            .enumerate()
        {
            let (s, ti) = (k / (c * t), k % t);
            let a = cache.attn[s * t + ti];
            let mut acc = 0.0;
            for ((d, &xv), &g) in dxr.iter_mut().zip(xr).zip(gr) {
                *d = a * g;
                acc += g * xv;
            }
            da[s * t + ti] += acc;
        }
        for s in 0..n {
            let ds: Vec<f64> = (0..t)
                .map(|ti| {
                    let a = cache.attn[s * t + ti];
                    da[s * t + ti] * a * (1.0 - a)
                })
                .collect();
            let hs = &cache.hidden[s * hd..(s + 1) * hd];
            let mut dh = vec![0.0; hd];
            for ti in 0..t {
                self.fc2_b.grad[ti] += ds[ti];
                for j in 0..hd {
                    self.fc2_w.grad[ti * hd + j] += ds[ti] * hs[j];
                    dh[j] += self.fc2_w.value[ti * hd + j] * ds[ti];
                }
            }
            let zs = &cache.z[s * t..(s + 1) * t];
            let mut dz = vec![0.0; t];
            for j in 0..hd {
                if hs[j] <= 0.0 {
                    continue;
                }
                self.fc1_b.grad[j] += dh[j];
                for ti in 0..t {
                    self.fc1_w.grad[j * t + ti] += dh[j] * zs[ti];
                    dz[ti] += self.fc1_w.value[j * t + ti] * dh[j];
                }
            }
            for ti in 0..t {
                self.conv_b.grad[0] += dz[ti];
                for ci in 0..c {
                    let k = (s * c + ci) * t + ti;
                    self.conv_w.grad[ci] += dz[ti] * cache.pooled[k];
                    let g = dz[ti] * self.conv_w.value[ci] / p as f64;
                    dx.data[k * p..(k + 1) * p].iter_mut().for_each(|d| *d += g);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn params(&self) -> [&Param; 6] {
        [&self.conv_w, &self.conv_b, &self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 5], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_mlp_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tam = Tam::new("tam", 3, 8, 4, &mut rng).unwrap();
        for p in [&mut tam.fc2_w, &mut tam.fc2_b] {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random([2, 3, 8, 2, 3], &mut rng);
        let (y, a) = tam.forward(&x).unwrap();
        assert!(a.iter().all(|m| m.weights.iter().all(|&w| w == 0.5)));
        for (u, v) in y.data.iter().zip(&x.data) {
            assert_eq!(*u, 0.5 * v);
        }
    }

    #[test]
    fn indivisible_length_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(Tam::new("t", 4, 10, 4, &mut rng), Err(Error::Config(_))));
        assert!(Tam::new("t", 4, 192, 16, &mut rng).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tam = Tam::new("tam", 3, 8, 2, &mut rng).unwrap();
        let x = random([2, 3, 8, 2, 2], &mut rng);
        let probe = random(x.shape, &mut rng);
        let loss = |m: &Tam, x: &Tensor| m.forward(x).unwrap().0.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = tam.forward_train(&x).unwrap();
        let dx = tam.backward(&cache, &probe);
        let h = 1e-6;
        let grads: Vec<Vec<f64>> = tam.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut m = tam.clone();
                m.params_mut()[pi].value[i] += h;
                let a = loss(&m, &x);
                m.params_mut()[pi].value[i] -= 2.0 * h;
                let fd = (a - loss(&m, &x)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "param {pi}[{i}]: {fd} vs {}", g[i]);
            }
        }
        for i in 0..x.data.len() {
            let mut x2 = x.clone();
            x2.data[i] += h;
            let a = loss(&tam, &x2);
            x2.data[i] -= 2.0 * h;
            let fd = (a - loss(&tam, &x2)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6);
        }
    }
}
