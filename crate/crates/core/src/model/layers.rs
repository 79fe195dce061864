//! Layers with hand-written forward and backward passes.
//!
//! Convolutions lower to im2col plus a dense GEMM, chunked along time so the
//! column buffer stays bounded.

use rand::Rng;

use super::tensor::Tensor;

/// Column buffer budget in values.
const COL_BUDGET: usize = 1 << 20;
/// Largest `C_in * C_out` handled by direct convolution instead of im2col.
const DIRECT_MAX_CHANNEL_PRODUCT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, shape, value)
    }

    pub fn constant(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds are checked here once so the unsafe call only sees valid extents.
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: every index touched by dgemm lies inside the slices (asserted above)
    // and `c` does not alias `a` or `b` since it is a distinct `&mut`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Stride-1 3-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub padding: [usize; 3],
    pub weight: Param,
    /// Omitted when a batch norm follows, which would cancel it.
    pub bias: Option<Param>,
}

struct ConvGeom {
    c_in: usize,
    t: usize,
    h: usize,
    w: usize,
    to: usize,
    ho: usize,
    wo: usize,
    k: [usize; 3],
    p: [usize; 3],
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.k[0] * self.k[1] * self.k[2]
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.ho * self.wo).max(1)).clamp(1, self.to)
    }

    /// Fills `col` (rows x ((t1 - t0) * ho * wo)) for output frames `t0..t1`.
    fn im2col(&self, x: &[f64], t0: usize, t1: usize, col: &mut [f64]) {
        let ncols = (t1 - t0) * self.ho * self.wo;
        let [kt, kh, kw] = self.k;
        let [pt, ph, pw] = self.p;
        let mut r = 0;
        for ci in 0..self.c_in {
            let xc = &x[ci * self.t * self.h * self.w..(ci + 1) * self.t * self.h * self.w];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let row = &mut col[r * ncols..(r + 1) * ncols];
                        let mut j = 0;
                        for to in t0..t1 {
                            let ti = (to + dt) as isize - pt as isize;
                            for ho in 0..self.ho {
                                let hi = (ho + dh) as isize - ph as isize;
                                let dst = &mut row[j..j + self.wo];
                                j += self.wo;
                                if ti < 0 || ti >= self.t as isize || hi < 0 || hi >= self.h as isize {
                                    dst.fill(0.0);
                                    continue;
                                }
                                let base = (ti as usize * self.h + hi as usize) * self.w;
                                for (wo, d) in dst.iter_mut().enumerate() {
                                    let wi = (wo + dw) as isize - pw as isize;
                                    *d = if wi < 0 || wi >= self.w as isize {
                                        0.0
                                    } else {
                                        xc[base + wi as usize]
                                    };
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], t0: usize, t1: usize, dx: &mut [f64]) {
        let ncols = (t1 - t0) * self.ho * self.wo;
        let [kt, kh, kw] = self.k;
        let [pt, ph, pw] = self.p;
        let mut r = 0;
        for ci in 0..self.c_in {
            let vol = self.t * self.h * self.w;
            let dxc = &mut dx[ci * vol..(ci + 1) * vol];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let row = &col[r * ncols..(r + 1) * ncols];
                        let mut j = 0;
                        for to in t0..t1 {
                            let ti = (to + dt) as isize - pt as isize;
                            for ho in 0..self.ho {
                                let hi = (ho + dh) as isize - ph as isize;
                                let src = &row[j..j + self.wo];
                                j += self.wo;
                                if ti < 0 || ti >= self.t as isize || hi < 0 || hi >= self.h as isize {
                                    continue;
                                }
                                let base = (ti as usize * self.h + hi as usize) * self.w;
                                for (wo, &s) in src.iter().enumerate() {
                                    let wi = (wo + dw) as isize - pw as isize;
                                    if wi >= 0 && wi < self.w as isize {
                                        dxc[base + wi as usize] += s;
                                    }
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

/// Direct convolution on a zero-padded copy of the input.
///
/// With stride 1, output voxel `(t, h, w)` placed at `t*Hp*Wp + h*Wp + w` in the
/// padded layout reads tap `(dt, dh, dw)` at a constant offset, so every
/// (channel pair, tap) is one contiguous axpy over the flattened volume. The
/// voxels that fall in padding columns are computed and discarded.
mod direct {
    use super::{Conv3d, ConvGeom, Tensor};

    const BLOCK: usize = 2048;

    struct Padded {
        tp: usize,
        hp: usize,
        wp: usize,
        /// Length of the flattened output run.
        run: usize,
    }

    fn padded(g: &ConvGeom) -> Padded {
        let (tp, hp, wp) = (g.t + 2 * g.p[0], g.h + 2 * g.p[1], g.w + 2 * g.p[2]);
        let run = (g.to - 1) * hp * wp + (g.ho - 1) * wp + g.wo;
        Padded { tp, hp, wp, run }
    }

    fn offsets(g: &ConvGeom, pd: &Padded) -> Vec<usize> {
        let mut v = Vec::with_capacity(g.k.iter().product());
        for dt in 0..g.k[0] {
            for dh in 0..g.k[1] {
                for dw in 0..g.k[2] {
                    v.push((dt * pd.hp + dh) * pd.wp + dw);
                }
            }
        }
        v
    }

    /// Writes the interior of the padded buffer; the border stays zero.
    fn pad_into(x: &[f64], g: &ConvGeom, pd: &Padded, out: &mut [f64]) {
        let pvol = pd.tp * pd.hp * pd.wp;
        for ci in 0..g.c_in {
            for t in 0..g.t {
                for h in 0..g.h {
                    let src = &x[((ci * g.t + t) * g.h + h) * g.w..][..g.w];
                    let o = ci * pvol + ((t + g.p[0]) * pd.hp + h + g.p[1]) * pd.wp + g.p[2];
                    out[o..o + g.w].copy_from_slice(src);
                }
            }
        }
    }

    fn wide_index(g: &ConvGeom, pd: &Padded) -> impl Iterator<Item = (usize, usize)> {
        let (ho, wo, hp, wp) = (g.ho, g.wo, pd.hp, pd.wp);
        (0..g.to).flat_map(move |t| {
            (0..ho).flat_map(move |h| (0..wo).map(move |w| (((t * ho) + h) * wo + w, (t * hp + h) * wp + w)))
        })
    }

    #[inline(always)]
    fn axpy_body(a: f64, x: &[f64], y: &mut [f64]) {
        y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
    }

    #[inline(always)]
    fn dot_body(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0; 8];
        let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
        let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
        for (x, y) in ca.zip(cb) {
            for k in 0..8 {
                acc[k] += x[k] * y[k];
            }
        }
        acc.iter().sum::<f64>() + tail
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn axpy_avx2(a: f64, x: &[f64], y: &mut [f64]) {
        axpy_body(a, x, y)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn dot_avx2(a: &[f64], b: &[f64]) -> f64 {
        dot_body(a, b)
    }

    fn has_avx2() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    }

    fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports the enabled target features (checked above).
            return unsafe { axpy_avx2(a, x, y) };
        }
        axpy_body(a, x, y)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: as in `axpy`.
            return unsafe { dot_avx2(a, b) };
        }
        dot_body(a, b)
    }

    pub(super) fn forward(conv: &Conv3d, x: &Tensor, g: &ConvGeom) -> Tensor {
        let pd = padded(g);
        let offs = offsets(g, &pd);
        let taps = offs.len();
        let pvol = pd.tp * pd.hp * pd.wp;
        let vol_o = g.to * g.ho * g.wo;
        let mut y = Tensor::zeros(conv.output_shape(x.shape));
        let mut wide = vec![0.0; conv.c_out * pd.run];
        let mut xp = vec![0.0; g.c_in * pvol];
        for n in 0..x.n() {
            pad_into(x.sample(n), g, &pd, &mut xp);
            wide.fill(0.0);
            for b0 in (0..pd.run).step_by(BLOCK) {
                let len = BLOCK.min(pd.run - b0);
                for ci in 0..g.c_in {
                    for (k, &off) in offs.iter().enumerate() {
                        let src = &xp[ci * pvol + off + b0..][..len];
                        for co in 0..conv.c_out {
                            let wv = conv.weight.value[(co * g.c_in + ci) * taps + k];
                            axpy(wv, src, &mut wide[co * pd.run + b0..][..len]);
                        }
                    }
                }
            }
            let ys = &mut y.data[n * conv.c_out * vol_o..(n + 1) * conv.c_out * vol_o];
            for co in 0..conv.c_out {
                let b = conv.bias.as_ref().map_or(0.0, |p| p.value[co]);
                for (i, j) in wide_index(g, &pd) {
                    ys[co * vol_o + i] = wide[co * pd.run + j] + b;
                }
            }
        }
        y
    }

    pub(super) fn backward(conv: &mut Conv3d, x: &Tensor, dy: &Tensor, g: &ConvGeom, need_dx: bool) -> Option<Tensor> {
        let pd = padded(g);
        let offs = offsets(g, &pd);
        let taps = offs.len();
        let pvol = pd.tp * pd.hp * pd.wp;
        let vol_o = g.to * g.ho * g.wo;
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
        let mut dwide = vec![0.0; conv.c_out * pd.run];
        let mut dxp = vec![0.0; if need_dx { g.c_in * pvol } else { 0 }];
        let mut xp = vec![0.0; g.c_in * pvol];
        for n in 0..x.n() {
            pad_into(x.sample(n), g, &pd, &mut xp);
            let dys = &dy.data[n * conv.c_out * vol_o..(n + 1) * conv.c_out * vol_o];
            for co in 0..conv.c_out {
                if let Some(bias) = conv.bias.as_mut() {
                    bias.grad[co] += dys[co * vol_o..(co + 1) * vol_o].iter().sum::<f64>();
                }
                for (i, j) in wide_index(g, &pd) {
                    dwide[co * pd.run + j] = dys[co * vol_o + i];
                }
            }
            dxp.fill(0.0);
            for b0 in (0..pd.run).step_by(BLOCK) {
                let len = BLOCK.min(pd.run - b0);
                for ci in 0..g.c_in {
                    for (k, &off) in offs.iter().enumerate() {
                        let s0 = ci * pvol + off + b0;
                        for co in 0..conv.c_out {
                            let widx = (co * g.c_in + ci) * taps + k;
                            let gr = &dwide[co * pd.run + b0..][..len];
                            conv.weight.grad[widx] += dot(gr, &xp[s0..s0 + len]);
                            if need_dx {
                                axpy(conv.weight.value[widx], gr, &mut dxp[s0..s0 + len]);
                            }
                        }
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                let sl = x.sample_len();
                let dxs = &mut dx.data[n * sl..(n + 1) * sl];
                for ci in 0..g.c_in {
                    for t in 0..g.t {
                        for h in 0..g.h {
                            let o = ci * pvol + ((t + g.p[0]) * pd.hp + h + g.p[1]) * pd.wp + g.p[2];
                            dxs[((ci * g.t + t) * g.h + h) * g.w..][..g.w].copy_from_slice(&dxp[o..o + g.w]);
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Conv3d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * kernel.iter().product::<usize>()) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            c_in,
            c_out,
            kernel,
            padding,
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![c_out, c_in, kernel[0], kernel[1], kernel[2]],
                bound,
                rng,
            ),
            bias: bias.then(|| Param::uniform(format!("{name}.bias"), vec![c_out], bound, rng)),
        }
    }

    pub fn output_shape(&self, s: [usize; 5]) -> [usize; 5] {
        let o = |i: usize, d: usize| s[i + 2] + 2 * self.padding[d] + 1 - self.kernel[d];
        [s[0], self.c_out, o(0, 0), o(1, 1), o(2, 2)]
    }

    fn geom(&self, s: [usize; 5]) -> ConvGeom {
        let o = self.output_shape(s);
        ConvGeom {
            c_in: self.c_in,
            t: s[2],
            h: s[3],
            w: s[4],
            to: o[2],
            ho: o[3],
            wo: o[4],
            k: self.kernel,
            p: self.padding,
        }
    }

    pub fn macs(&self, s: [usize; 5]) -> u64 {
        let o = self.output_shape(s);
        (o.iter().product::<usize>() * self.c_in * self.kernel.iter().product::<usize>()) as u64
    }

    /// Thin layers make the GEMM too small to pay for im2col.
    fn use_direct(&self) -> bool {
        self.c_in * self.c_out <= DIRECT_MAX_CHANNEL_PRODUCT
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.c_in, "conv input channels");
        let g = self.geom(x.shape);
        if self.use_direct() {
            return direct::forward(self, x, &g);
        }
        let mut y = Tensor::zeros(self.output_shape(x.shape));
        let rows = g.rows();
        let vol_o = g.to * g.ho * g.wo;
        let chunk = g.chunk();
        let mut col = vec![0.0; rows * chunk * g.ho * g.wo];
        for n in 0..x.n() {
            let xs = x.sample(n);
            let ys = &mut y.data[n * self.c_out * vol_o..(n + 1) * self.c_out * vol_o];
            let mut t0 = 0;
            while t0 < g.to {
                let t1 = (t0 + chunk).min(g.to);
                let ncols = (t1 - t0) * g.ho * g.wo;
                g.im2col(xs, t0, t1, &mut col);
                let off = t0 * g.ho * g.wo;
                gemm(
                    self.c_out,
                    rows,
                    ncols,
                    &self.weight.value,
                    rows,
                    1,
                    &col[..rows * ncols],
                    ncols,
                    1,
                    0.0,
                    &mut ys[off..],
                    vol_o,
                    1,
                );
                t0 = t1;
            }
            if let Some(bias) = &self.bias {
                for (co, b) in bias.value.iter().enumerate() {
                    ys[co * vol_o..(co + 1) * vol_o].iter_mut().for_each(|v| *v += b);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient if requested.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let g = self.geom(x.shape);
        if self.use_direct() {
            return direct::backward(self, x, dy, &g, need_dx);
        }
        let rows = g.rows();
        let vol_o = g.to * g.ho * g.wo;
        let chunk = g.chunk();
        let mut col = vec![0.0; rows * chunk * g.ho * g.wo];
        let mut dcol = if need_dx { vec![0.0; col.len()] } else { Vec::new() };
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
        for n in 0..x.n() {
            let xs = x.sample(n);
            let dys = &dy.data[n * self.c_out * vol_o..(n + 1) * self.c_out * vol_o];
            if let Some(bias) = self.bias.as_mut() {
                for (co, gb) in bias.grad.iter_mut().enumerate() {
                    *gb += dys[co * vol_o..(co + 1) * vol_o].iter().sum::<f64>();
                }
            }
            let mut t0 = 0;
            while t0 < g.to {
                let t1 = (t0 + chunk).min(g.to);
                let ncols = (t1 - t0) * g.ho * g.wo;
                let off = t0 * g.ho * g.wo;
                g.im2col(xs, t0, t1, &mut col);
                gemm(
                    self.c_out,
                    ncols,
                    rows,
                    &dys[off..],
                    vol_o,
                    1,
                    &col[..rows * ncols],
                    1,
                    ncols,
                    1.0,
                    &mut self.weight.grad,
                    rows,
                    1,
                );
                if let Some(dx) = dx.as_mut() {
                    gemm(
                        rows,
                        self.c_out,
                        ncols,
                        &self.weight.value,
                        1,
                        rows,
                        &dys[off..],
                        vol_o,
                        1,
                        0.0,
                        &mut dcol[..rows * ncols],
                        ncols,
                        1,
                    );
                    let sl = x.sample_len();
                    g.col2im(&dcol[..rows * ncols], t0, t1, &mut dx.data[n * sl..(n + 1) * sl]);
                }
                t0 = t1;
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }
}

/// Transposed convolution along time only: kernel `(4, 1, 1)`, stride `(2, 1, 1)`,
/// padding `(1, 0, 0)`, doubling the temporal length.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalUpsample {
    pub channels: usize,
    /// Layout `(C_in, C_out, 4)`; no bias since a batch norm always follows.
    pub weight: Param,
}

const UP_K: usize = 4;

impl TemporalUpsample {
    pub fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((channels * UP_K) as f64).sqrt();
        Self {
            channels,
            weight: Param::uniform(format!("{name}.weight"), vec![channels, channels, UP_K, 1, 1], bound, rng),
        }
    }

    pub fn output_shape(&self, s: [usize; 5]) -> [usize; 5] {
        [s[0], self.channels, 2 * s[2], s[3], s[4]]
    }

    pub fn macs(&self, s: [usize; 5]) -> u64 {
        (s[0] * s[2] * s[3] * s[4] * self.channels * self.channels * UP_K) as u64
    }

    /// Weight slice `W_k` as a `(C_out, C_in)` view: element `(co, ci)` sits at `ci * C * 4 + co * 4 + k`.
    fn wk(&self, k: usize) -> (&[f64], usize, usize) {
        (&self.weight.value[k..], UP_K, self.channels * UP_K)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let c = self.channels;
        let (ti, hw) = (x.t(), x.plane());
        let mut y = Tensor::zeros(self.output_shape(x.shape));
        let to = 2 * ti;
        let mut tmp = vec![0.0; c * ti * hw];
        for n in 0..x.n() {
            let xs = x.sample(n);
            let ys = &mut y.data[n * c * to * hw..(n + 1) * c * to * hw];
            for k in 0..UP_K {
                let (w, rs, cs) = self.wk(k);
                gemm(c, c, ti * hw, w, rs, cs, xs, ti * hw, 1, 0.0, &mut tmp, ti * hw, 1);
                for co in 0..c {
                    for i in 0..ti {
                        let t = 2 * i + k;
                        if t < 1 || t > to {
                            continue;
                        }
                        let t = t - 1;
                        let src = &tmp[(co * ti + i) * hw..(co * ti + i + 1) * hw];
                        let dst = &mut ys[(co * to + t) * hw..(co * to + t + 1) * hw];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let c = self.channels;
        let (ti, hw) = (x.t(), x.plane());
        let to = 2 * ti;
        let mut dx = Tensor::zeros(x.shape);
        let mut shifted = vec![0.0; c * ti * hw];
        for n in 0..x.n() {
            let xs = x.sample(n);
            let dys = &dy.data[n * c * to * hw..(n + 1) * c * to * hw];
            let dxs = &mut dx.data[n * c * ti * hw..(n + 1) * c * ti * hw];
            for k in 0..UP_K {
                for co in 0..c {
                    for i in 0..ti {
                        let t = 2 * i + k;
                        let dst = &mut shifted[(co * ti + i) * hw..(co * ti + i + 1) * hw];
                        if t < 1 || t > to {
                            dst.fill(0.0);
                        } else {
                            dst.copy_from_slice(&dys[(co * to + t - 1) * hw..(co * to + t) * hw]);
                        }
                    }
                }
                // dW_k[co, ci] = sum_j shifted[co, j] x[ci, j]
                gemm(
                    c,
                    ti * hw,
                    c,
                    &shifted,
                    ti * hw,
                    1,
                    xs,
                    1,
                    ti * hw,
                    1.0,
                    &mut self.weight.grad[k..],
                    UP_K,
                    c * UP_K,
                );
                // dx[ci, j] += sum_co W_k[co, ci] shifted[co, j]
                gemm(
                    c,
                    c,
                    ti * hw,
                    &self.weight.value[k..],
                    c * UP_K,
                    UP_K,
                    &shifted,
                    ti * hw,
                    1,
                    1.0,
                    dxs,
                    ti * hw,
                    1,
                );
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 1] {
        [&mut self.weight]
    }

    pub fn params(&self) -> [&Param; 1] {
        [&self.weight]
    }
}

/// Activation applied right after batch normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Elu => {
                if v > 0.0 {
                    v
                } else {
                    v.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `v`.
    #[inline]
    fn grad(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if v > 0.0 {
                    1.0
                } else {
                    v.exp()
                }
            }
        }
    }
}

/// Per-channel batch normalisation over `(N, T, H, W)`, fused with the
/// following activation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm3d {
    pub fn new(name: &str, channels: usize, activation: Activation) -> Self {
        Self {
            gamma: Param::constant(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::constant(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            activation,
        }
    }

    fn channel_offsets(shape: [usize; 5], c: usize) -> impl Iterator<Item = usize> {
        let (cc, vol) = (shape[1], shape[2] * shape[3] * shape[4]);
        (0..shape[0]).map(move |n| (n * cc + c) * vol)
    }

    /// Normalises with running statistics.
    pub fn forward_eval(&self, mut x: Tensor) -> Tensor {
        let vol = x.volume();
        for c in 0..x.c() {
            let s = self.gamma.value[c] / (self.running_var[c] + self.eps).sqrt();
            let b = self.beta.value[c] - s * self.running_mean[c];
            for o in Self::channel_offsets(x.shape, c) {
                x.data[o..o + vol]
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(s * *v + b));
            }
        }
        x
    }

    /// Normalises with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, mut x: Tensor) -> (Tensor, BnCache) {
        let (nn, cc, vol) = (x.n(), x.c(), x.volume());
        let m = (nn * vol) as f64;
        let mut y = Tensor::zeros(x.shape);
        let mut inv_std = vec![0.0; cc];
        for c in 0..cc {
            let offs = || Self::channel_offsets(x.shape, c);
            let mean = offs().map(|o| x.data[o..o + vol].iter().sum::<f64>()).sum::<f64>() / m;
            let var = offs()
                .map(|o| x.data[o..o + vol].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                .sum::<f64>()
                / m;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = is;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for o in offs() {
                for (xv, yv) in x.data[o..o + vol].iter_mut().zip(&mut y.data[o..o + vol]) {
                    let h = (*xv - mean) * is;
                    *xv = h;
                    *yv = self.activation.apply(g * h + b);
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        (y, BnCache { x_hat: x, inv_std })
    }

    /// Gradient w.r.t. the normalisation input, reusing `dy` as storage.
    pub fn backward(&mut self, cache: &BnCache, mut dy: Tensor) -> Tensor {
        let (nn, vol) = (dy.n(), dy.volume());
        let m = (nn * vol) as f64;
        for c in 0..dy.c() {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for o in Self::channel_offsets(dy.shape, c) {
                for (d, &h) in dy.data[o..o + vol].iter_mut().zip(&cache.x_hat.data[o..o + vol]) {
                    *d *= self.activation.grad(g * h + b);
                    sum_dy += *d;
                    sum_dy_xh += *d * h;
                }
            }
            self.gamma.grad[c] += sum_dy_xh;
            self.beta.grad[c] += sum_dy;
            let k = g * cache.inv_std[c] / m;
            for o in Self::channel_offsets(dy.shape, c) {
                for (d, &h) in dy.data[o..o + vol].iter_mut().zip(&cache.x_hat.data[o..o + vol]) {
                    *d = k * (m * *d - sum_dy - h * sum_dy_xh);
                }
            }
        }
        dy
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}

/// Non-overlapping max pooling; kernel extents are clamped to the input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
}

impl MaxPool3d {
    pub fn effective(&self, s: [usize; 5]) -> [usize; 3] {
        [
            self.kernel[0].min(s[2]).max(1),
            self.kernel[1].min(s[3]).max(1),
            self.kernel[2].min(s[4]).max(1),
        ]
    }

    pub fn output_shape(&self, s: [usize; 5]) -> [usize; 5] {
        let k = self.effective(s);
        [s[0], s[1], s[2] / k[0], s[3] / k[1], s[4] / k[2]]
    }

    /// Output plus the flat input index of each selected maximum.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let k = self.effective(x.shape);
        let o = self.output_shape(x.shape);
        let [_, _, ti, hi, wi] = x.shape;
        let mut y = Tensor::zeros(o);
        let mut arg = vec![0usize; y.data.len()];
        let mut j = 0;
        for nc in 0..o[0] * o[1] {
            let base = nc * ti * hi * wi;
            for t in 0..o[2] {
                for h in 0..o[3] {
                    for w in 0..o[4] {
                        let mut bi = base + ((t * k[0]) * hi + h * k[1]) * wi + w * k[2];
                        let mut best = x.data[bi];
                        for dt in 0..k[0] {
                            for dh in 0..k[1] {
                                let row = base + ((t * k[0] + dt) * hi + h * k[1] + dh) * wi + w * k[2];
                                for i in row..row + k[2] {
                                    if x.data[i] > best {
                                        best = x.data[i];
                                        bi = i;
                                    }
                                }
                            }
                        }
                        y.data[j] = best;
                        arg[j] = bi;
                        j += 1;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn backward(input_shape: [usize; 5], arg: &[usize], dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(input_shape);
        for (&i, &g) in arg.iter().zip(&dy.data) {
            dx.data[i] += g;
        }
        dx
    }
}

/// Mean over `(H, W)`, keeping singleton spatial dims.
pub fn spatial_mean(x: &Tensor) -> Tensor {
    let p = x.plane();
    let [n, c, t, _, _] = x.shape;
    let data = x.data.chunks_exact(p).map(|r| r.iter().sum::<f64>() / p as f64).collect();
    Tensor {
        shape: [n, c, t, 1, 1],
        data,
    }
}

pub fn spatial_mean_backward(input_shape: [usize; 5], dy: &Tensor) -> Tensor {
    let p = input_shape[3] * input_shape[4];
    let mut dx = Tensor::zeros(input_shape);
    for (chunk, &g) in dx.data.chunks_exact_mut(p).zip(&dy.data) {
        chunk.fill(g / p as f64);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 5], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution.
    fn conv_naive(conv: &Conv3d, x: &Tensor) -> Tensor {
        let o = conv.output_shape(x.shape);
        let mut y = Tensor::zeros(o);
        let [kt, kh, kw] = conv.kernel;
        let [pt, ph, pw] = conv.padding;
        let mut j = 0;
        for n in 0..o[0] {
            for co in 0..o[1] {
                for t in 0..o[2] {
                    for h in 0..o[3] {
                        for w in 0..o[4] {
                            let mut acc = conv.bias.as_ref().unwrap().value[co];
                            for ci in 0..conv.c_in {
                                for dt in 0..kt {
                                    for dh in 0..kh {
                                        for dw in 0..kw {
                                            let (ti, hi, wi) = (
                                                (t + dt) as isize - pt as isize,
                                                (h + dh) as isize - ph as isize,
                                                (w + dw) as isize - pw as isize,
                                            );
                                            if ti < 0 || hi < 0 || wi < 0 {
                                                continue;
                                            }
                                            let (ti, hi, wi) = (ti as usize, hi as usize, wi as usize);
                                            if ti >= x.shape[2] || hi >= x.shape[3] || wi >= x.shape[4] {
                                                continue;
                                            }
                                            let widx = (((co * conv.c_in + ci) * kt + dt) * kh + dh) * kw + dw;
                                            acc += conv.weight.value[widx] * x.at(n, ci, ti, hi, wi);
                                        }
                                    }
                                }
                            }
                            y.data[j] = acc;
                            j += 1;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(k, p) in &[([3, 3, 3], [1, 1, 1]), ([1, 5, 5], [0, 2, 2]), ([2, 1, 3], [0, 0, 1])] {
            // wide and thin layers take the direct path, the rest im2col
            for (co, shape) in [(4, [2, 3, 5, 6, 7]), (2, [1, 3, 3, 4, 18])] {
                let conv = Conv3d::new("c", 3, co, k, p, true, &mut rng);
                let x = rand_tensor(shape, &mut rng);
                let a = conv.forward(&x);
                let b = conv_naive(&conv, &x);
                assert_eq!(a.shape, b.shape);
                for (u, v) in a.data.iter().zip(&b.data) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    /// Loss = sum(dy_probe * layer(x)); checks analytic gradients by central differences.
    #[test]
    fn conv_backward_matches_finite_differences() {
        conv_backward_check([2, 2, 4, 5, 5], 3);
        conv_backward_check([1, 2, 2, 3, 17], 2);
    }

    fn conv_backward_check(shape: [usize; 5], c_out: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv3d::new("c", shape[1], c_out, [3, 3, 3], [1, 1, 1], true, &mut rng);
        let x = rand_tensor(shape, &mut rng);
        let probe = rand_tensor(conv.output_shape(x.shape), &mut rng);
        let loss = |c: &Conv3d, x: &Tensor| c.forward(x).data.iter().zip(&probe.data).map(|(a, b)| a * b).sum::<f64>();
        let dx = conv.backward(&x, &probe, true).unwrap();
        let h = 1e-5;
        for i in (0..conv.weight.len()).step_by(7) {
            let mut c2 = conv.clone();
            c2.weight.value[i] += h;
            let up = loss(&c2, &x);
            c2.weight.value[i] -= 2.0 * h;
            let fd = (up - loss(&c2, &x)) / (2.0 * h);
            assert!((fd - conv.weight.grad[i]).abs() < 1e-7, "w{i}: {fd} vs {}", conv.weight.grad[i]);
        }
        for i in (0..x.data.len()).step_by(11) {
            let mut x2 = x.clone();
            x2.data[i] += h;
            let up = loss(&conv, &x2);
            x2.data[i] -= 2.0 * h;
            let fd = (up - loss(&conv, &x2)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn upsample_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut up = TemporalUpsample::new("u", 3, &mut rng);
        let x = rand_tensor([2, 3, 4, 2, 1], &mut rng);
        let y = up.forward(&x);
        assert_eq!(y.shape, [2, 3, 8, 2, 1]);
        let probe = rand_tensor(y.shape, &mut rng);
        let loss = |u: &TemporalUpsample, x: &Tensor| u.forward(x).data.iter().zip(&probe.data).map(|(a, b)| a * b).sum::<f64>();
        let dx = up.backward(&x, &probe);
        let h = 1e-5;
        for i in 0..up.weight.len() {
            let mut u2 = up.clone();
            u2.weight.value[i] += h;
            let a = loss(&u2, &x);
            u2.weight.value[i] -= 2.0 * h;
            let fd = (a - loss(&u2, &x)) / (2.0 * h);
            assert!((fd - up.weight.grad[i]).abs() < 1e-7);
        }
        for i in 0..x.data.len() {
            let mut x2 = x.clone();
            x2.data[i] += h;
            let a = loss(&up, &x2);
            x2.data[i] -= 2.0 * h;
            let fd = (a - loss(&up, &x2)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn upsample_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = TemporalUpsample::new("u", 2, &mut rng);
        let x = rand_tensor([1, 2, 3, 1, 1], &mut rng);
        let y = up.forward(&x);
        for co in 0..2 {
            for t in 0..6 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for i in 0..3 {
                        let k = t as isize + 1 - 2 * i as isize;
                        if (0..4).contains(&k) {
                            acc += up.weight.value[(ci * 2 + co) * 4 + k as usize] * x.at(0, ci, i, 0, 0);
                        }
                    }
                }
                assert!((acc - y.at(0, co, t, 0, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in [Activation::Relu, Activation::Elu] {
            batchnorm_check(act, &mut rng);
        }
    }

    fn batchnorm_check(act: Activation, rng: &mut impl Rng) {
        let mut bn = BatchNorm3d::new("bn", 2, act);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let x = rand_tensor([2, 2, 3, 2, 2], rng);
        let probe = rand_tensor(x.shape, rng);
        let (_, cache) = bn.forward_train(x.clone());
        let dx = bn.backward(&cache, probe.clone());
        let loss = |x: &Tensor| {
            let mut b = bn.clone();
            b.forward_train(x.clone()).0.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-5;
        for i in 0..x.data.len() {
            let mut x2 = x.clone();
            x2.data[i] += h;
            let a = loss(&x2);
            x2.data[i] -= 2.0 * h;
            let fd = (a - loss(&x2)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7, "{fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn pool_clamps_and_routes_gradient() {
        let x = Tensor::from_vec([1, 1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, -1.0]).unwrap();
        let p = MaxPool3d { kernel: [2, 2, 2] };
        let (y, arg) = p.forward(&x);
        assert_eq!(y.shape, [1, 1, 1, 1, 2]);
        assert_eq!(y.data, vec![5.0, 9.0]);
        let dx = MaxPool3d::backward(x.shape, &arg, &Tensor::from_vec(y.shape, vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
