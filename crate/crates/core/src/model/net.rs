use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    spatial_mean, spatial_mean_backward, Activation, BatchNorm3d, BnCache, Conv3d, MaxPool3d, Param,
    TemporalUpsample,
};
use super::tam::{AttentionMap, Tam, TamCache};
use super::tensor::Tensor;
use crate::dataset::CHANNELS;
use crate::error::{Error, Result};
use crate::preprocess::NormalizedClip;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length in frames.
    pub t: usize,
    /// Attention MLP reduction rate.
    pub reduction: usize,
    /// Channel widths of the stem, the second block, and all later blocks.
    pub widths: [usize; 3],
    /// Square input resolution.
    pub input_size: usize,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t: 768,
            reduction: 16,
            widths: [16, 32, 64],
            input_size: 72,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.reduction;
        if self.t == 0 || self.t % 4 != 0 {
            return Err(Error::Config(format!("T = {} must be a positive multiple of 4", self.t)));
        }
        if r == 0 || (self.t / 4) % r != 0 || (self.t / 2) % r != 0 {
            return Err(Error::Config(format!(
                "reduction {r} must divide T/4 = {} and T/2 = {}",
                self.t / 4,
                self.t / 2
            )));
        }
        if self.widths.contains(&0) || self.input_size == 0 {
            return Err(Error::Config("channel widths and input size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Conv { name: String, conv: Conv3d, bn: BatchNorm3d },
    Pool(MaxPool3d),
    Attention { name: String, tam: Tam },
    Up { name: String, up: TemporalUpsample, bn: BatchNorm3d },
    SpatialMean,
    Head(Conv3d),
}

#[derive(Debug, Clone)]
enum NodeCache {
    Conv { x: Tensor, bn: BnCache },
    Pool { shape: [usize; 5], arg: Vec<usize> },
    Attention(TamCache),
    Up { x: Tensor, bn: BnCache },
    SpatialMean { shape: [usize; 5] },
    Head { x: Tensor },
}

impl Node {
    fn name(&self) -> &str {
        match self {
            Node::Conv { name, .. } | Node::Attention { name, .. } | Node::Up { name, .. } => name,
            Node::Pool(_) => "pool",
            Node::SpatialMean => "spatial_mean",
            Node::Head(_) => "head",
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Node::Conv { conv, bn, .. } => conv.params().into_iter().chain(bn.params()).collect(),
            Node::Up { up, bn, .. } => up.params().into_iter().chain(bn.params()).collect(),
            Node::Attention { tam, .. } => tam.params().to_vec(),
            Node::Head(c) => c.params(),
            Node::Pool(_) | Node::SpatialMean => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Node::Conv { conv, bn, .. } => conv.params_mut().into_iter().chain(bn.params_mut()).collect(),
            Node::Up { up, bn, .. } => up.params_mut().into_iter().chain(bn.params_mut()).collect(),
            Node::Attention { tam, .. } => tam.params_mut().into_iter().collect(),
            Node::Head(c) => c.params_mut(),
            Node::Pool(_) | Node::SpatialMean => Vec::new(),
        }
    }

    fn bn_mut(&mut self) -> Option<&mut BatchNorm3d> {
        match self {
            Node::Conv { bn, .. } | Node::Up { bn, .. } => Some(bn),
            _ => None,
        }
    }

    fn bn(&self) -> Option<&BatchNorm3d> {
        match self {
            Node::Conv { bn, .. } | Node::Up { bn, .. } => Some(bn),
            _ => None,
        }
    }

    fn output_shape(&self, s: [usize; 5]) -> [usize; 5] {
        match self {
            Node::Conv { conv, .. } => conv.output_shape(s),
            Node::Pool(p) => p.output_shape(s),
            Node::Attention { .. } => s,
            Node::Up { up, .. } => up.output_shape(s),
            Node::SpatialMean => [s[0], s[1], s[2], 1, 1],
            Node::Head(c) => c.output_shape(s),
        }
    }

    fn macs(&self, s: [usize; 5]) -> u64 {
        match self {
            Node::Conv { conv, .. } | Node::Head(conv) => conv.macs(s),
            Node::Up { up, .. } => up.macs(s),
            Node::Attention { tam, .. } => (s[0] * (s[1] * s[2] + 2 * tam.t * tam.hidden)) as u64,
            Node::Pool(_) | Node::SpatialMean => 0,
        }
    }

    fn forward(&self, x: Tensor) -> Result<Tensor> {
        Ok(match self {
            Node::Conv { conv, bn, .. } => bn.forward_eval(conv.forward(&x)),
            Node::Pool(p) => p.forward(&x).0,
            Node::Attention { tam, .. } => tam.forward(&x)?.0,
            Node::Up { up, bn, .. } => bn.forward_eval(up.forward(&x)),
            Node::SpatialMean => spatial_mean(&x),
            Node::Head(c) => c.forward(&x),
        })
    }

    fn forward_train(&mut self, x: Tensor) -> Result<(Tensor, NodeCache)> {
        Ok(match self {
            Node::Conv { conv, bn, .. } => {
                let (y, bc) = bn.forward_train(conv.forward(&x));
                (y, NodeCache::Conv { x, bn: bc })
            }
            Node::Pool(p) => {
                let (y, arg) = p.forward(&x);
                (y, NodeCache::Pool { shape: x.shape, arg })
            }
            Node::Attention { tam, .. } => {
                let (y, c) = tam.forward_train(&x)?;
                (y, NodeCache::Attention(c))
            }
            Node::Up { up, bn, .. } => {
                let (y, bc) = bn.forward_train(up.forward(&x));
                (y, NodeCache::Up { x, bn: bc })
            }
            Node::SpatialMean => (spatial_mean(&x), NodeCache::SpatialMean { shape: x.shape }),
            Node::Head(c) => (c.forward(&x), NodeCache::Head { x }),
        })
    }

    fn backward(&mut self, cache: NodeCache, dy: Tensor, need_dx: bool) -> Option<Tensor> {
        match (self, cache) {
            (Node::Conv { conv, bn, .. }, NodeCache::Conv { x, bn: bc }) => {
                let d = bn.backward(&bc, dy);
                conv.backward(&x, &d, need_dx)
            }
            (Node::Pool(_), NodeCache::Pool { shape, arg }) => Some(MaxPool3d::backward(shape, &arg, &dy)),
            (Node::Attention { tam, .. }, NodeCache::Attention(c)) => Some(tam.backward(&c, &dy)),
            (Node::Up { up, bn, .. }, NodeCache::Up { x, bn: bc }) => {
                let d = bn.backward(&bc, dy);
                Some(up.backward(&x, &d))
            }
            (Node::SpatialMean, NodeCache::SpatialMean { shape }) => Some(spatial_mean_backward(shape, &dy)),
            (Node::Head(c), NodeCache::Head { x }) => c.backward(&x, &dy, need_dx),
            _ => unreachable!("cache kind always matches the node that produced it"),
        }
    }
}

/// Parameter counts, partitioned by submodule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_submodule: Vec<(String, usize)>,
}

impl ParamCount {
    /// Parameters inside the temporal attention blocks.
    pub fn attention(&self) -> usize {
        self.per_submodule
            .iter()
            .filter(|(n, _)| n.starts_with("tam"))
            .map(|(_, c)| c)
            .sum()
    }
}

/// 3D-CNN encoder-decoder with temporal attention before each temporal
/// up-sampling step.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    nodes: Vec<Node>,
    caches: Vec<NodeCache>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.nodes == other.nodes
    }
}

pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let [w0, w1, w2] = config.widths;
    let mut nodes = Vec::new();
    let conv = |nodes: &mut Vec<Node>, name: &str, ci: usize, co: usize, k: [usize; 3], p: [usize; 3], rng: &mut ChaCha8Rng| {
        nodes.push(Node::Conv {
            name: name.to_string(),
            conv: Conv3d::new(name, ci, co, k, p, false, rng),
            bn: BatchNorm3d::new(&format!("{name}.bn"), co, Activation::Relu),
        })
    };
    let k3 = [3, 3, 3];
    let p1 = [1, 1, 1];
    conv(&mut nodes, "stem", CHANNELS, w0, [1, 5, 5], [0, 2, 2], &mut rng);
    nodes.push(Node::Pool(MaxPool3d { kernel: [1, 4, 4] }));
    conv(&mut nodes, "block2", w0, w1, k3, p1, &mut rng);
    conv(&mut nodes, "block3", w1, w2, k3, p1, &mut rng);
    nodes.push(Node::Pool(MaxPool3d { kernel: [2, 2, 2] }));
    conv(&mut nodes, "block4", w2, w2, k3, p1, &mut rng);
    conv(&mut nodes, "block5", w2, w2, k3, p1, &mut rng);
    nodes.push(Node::Pool(MaxPool3d { kernel: [2, 2, 2] }));
    conv(&mut nodes, "block6", w2, w2, k3, p1, &mut rng);
    conv(&mut nodes, "block7", w2, w2, k3, p1, &mut rng);
    nodes.push(Node::Pool(MaxPool3d { kernel: [1, 2, 2] }));
    conv(&mut nodes, "block8", w2, w2, k3, p1, &mut rng);
    conv(&mut nodes, "block9", w2, w2, k3, p1, &mut rng);
    for (i, t) in [config.t / 4, config.t / 2].into_iter().enumerate() {
        let tname = format!("tam{}", i + 1);
        nodes.push(Node::Attention {
            tam: Tam::new(&tname, w2, t, config.reduction, &mut rng)?,
            name: tname,
        });
        let uname = format!("up{}", i + 1);
        nodes.push(Node::Up {
            up: TemporalUpsample::new(&uname, w2, &mut rng),
            bn: BatchNorm3d::new(&format!("{uname}.bn"), w2, Activation::Elu),
            name: uname,
        });
    }
    nodes.push(Node::SpatialMean);
    nodes.push(Node::Head(Conv3d::new("head", w2, 1, [1, 1, 1], [0, 0, 0], true, &mut rng)));
    Ok(Model {
        config: config.clone(),
        nodes,
        caches: Vec::new(),
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        let s = self.config.input_size;
        [batch, CHANNELS, self.config.t, s, s]
    }

    /// Output length per sample, derived by shape propagation.
    pub fn output_len(&self) -> usize {
        let mut s = self.input_shape(1);
        for n in &self.nodes {
            s = n.output_shape(s);
        }
        s[1] * s[2] * s[3] * s[4]
    }

    /// Shapes after every node for a batch of one.
    pub fn shape_trace(&self) -> Vec<(String, [usize; 5])> {
        let mut s = self.input_shape(1);
        self.nodes
            .iter()
            .map(|n| {
                s = n.output_shape(s);
                (n.name().to_string(), s)
            })
            .collect()
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut per: Vec<(String, usize)> = Vec::new();
        for n in &self.nodes {
            let c: usize = n.params().iter().map(|p| p.len()).sum();
            if c > 0 {
                per.push((n.name().to_string(), c));
            }
        }
        ParamCount {
            total: per.iter().map(|(_, c)| c).sum(),
            per_submodule: per,
        }
    }

    /// Multiply-accumulate operations of one forward pass.
    pub fn macs(&self, batch: usize) -> u64 {
        let mut s = self.input_shape(batch);
        let mut total = 0;
        for n in &self.nodes {
            total += n.macs(s);
            s = n.output_shape(s);
        }
        total
    }

    pub fn params(&self) -> Vec<&Param> {
        self.nodes.iter().flat_map(|n| n.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.nodes.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    /// Batch-norm running statistics as named buffers.
    pub fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Some(bn) = n.bn() {
                let base = bn.gamma.name.trim_end_matches(".gamma").to_string();
                out.push((format!("{base}.running_mean"), &bn.running_mean));
                out.push((format!("{base}.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for n in &mut self.nodes {
            if let Some(bn) = n.bn_mut() {
                let base = bn.gamma.name.trim_end_matches(".gamma").to_string();
                out.push((format!("{base}.running_mean"), &mut bn.running_mean));
                out.push((format!("{base}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = self.input_shape(x.n());
        if x.shape != expected || x.n() == 0 {
            return Err(Error::Shape(format!("model expects input {expected:?}, got {:?}", x.shape)));
        }
        Ok(())
    }

    fn split_output(&self, y: Tensor) -> Vec<Vec<f64>> {
        let t = self.config.t;
        y.data.chunks_exact(t).map(|c| c.to_vec()).collect()
    }

    /// Inference-mode forward pass: one prediction vector of length T per sample.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for n in &self.nodes {
            h = n.forward(h)?;
        }
        Ok(self.split_output(h))
    }

    /// Attention weights of both attention blocks in inference mode.
    pub fn attention_maps(&self, x: &Tensor) -> Result<Vec<Vec<AttentionMap>>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut maps = Vec::new();
        for n in &self.nodes {
            if let Node::Attention { tam, .. } = n {
                let (y, m) = tam.forward(&h)?;
                maps.push(m);
                h = y;
            } else {
                h = n.forward(h)?;
            }
        }
        Ok(maps)
    }

    pub fn predict(&self, clips: &[&NormalizedClip]) -> Result<Vec<Vec<f64>>> {
        self.forward(&batch_from_clips(clips, &self.config)?)
    }

    /// Training-mode forward pass (batch statistics); keeps what `backward` needs.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        self.caches.clear();
        let mut h = x.clone();
        for n in &mut self.nodes {
            let (y, c) = n.forward_train(h)?;
            self.caches.push(c);
            h = y;
        }
        Ok(self.split_output(h))
    }

    /// Accumulates parameter gradients for the upstream gradient `d_out`
    /// (one vector of length T per sample) of the last `forward_train`.
    pub fn backward(&mut self, d_out: &[Vec<f64>]) -> Result<()> {
        if self.caches.len() != self.nodes.len() {
            return Err(Error::Shape("backward called without a preceding forward_train".into()));
        }
        let t = self.config.t;
        if d_out.iter().any(|d| d.len() != t) {
            return Err(Error::Shape(format!("output gradients must have length {t}")));
        }
        let mut g = Tensor::from_vec([d_out.len(), 1, t, 1, 1], d_out.concat())?;
        let caches = std::mem::take(&mut self.caches);
        let last = self.nodes.len() - 1;
        for (i, (node, cache)) in self.nodes.iter_mut().zip(caches).enumerate().rev() {
            match node.backward(cache, g, i > 0) {
                Some(d) => g = d,
                None => {
                    debug_assert!(i == 0 || i == last);
                    break;
                }
            }
        }
        Ok(())
    }

    /// Mean squared error and its gradient, after a training-mode pass.
    pub fn mse_step(&mut self, x: &Tensor, labels: &[Vec<f64>]) -> Result<f64> {
        let pred = self.forward_train(x)?;
        let (loss, grad) = mse(&pred, labels)?;
        self.backward(&grad)?;
        Ok(loss)
    }
}

/// Mean squared error over every element and its gradient w.r.t. `pred`.
pub fn mse(pred: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if pred.len() != labels.len() || pred.iter().zip(labels).any(|(p, l)| p.len() != l.len()) {
        return Err(Error::Shape("prediction and label shapes differ".into()));
    }
    let count = pred.iter().map(|p| p.len()).sum::<usize>() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            p.iter()
                .zip(l)
                .map(|(a, b)| {
                    loss += (a - b) * (a - b);
                    2.0 * (a - b) / count
                })
                .collect()
        })
        .collect();
    Ok((loss / count, grad))
}

/// Stacks clips into a `(N, 3, T, H, W)` tensor.
pub fn batch_from_clips(clips: &[&NormalizedClip], config: &ModelConfig) -> Result<Tensor> {
    let (t, s) = (config.t, config.input_size);
    let mut x = Tensor::zeros([clips.len(), CHANNELS, t, s, s]);
    let vol = t * s * s;
    for (n, clip) in clips.iter().enumerate() {
        if clip.height != s || clip.width != s || clip.labels.len() != t || clip.diff_frames.len() != vol * CHANNELS {
            return Err(Error::Shape(format!(
                "clip {}x{} with {} labels does not match model input T = {t}, {s}x{s}",
                clip.height,
                clip.width,
                clip.labels.len()
            )));
        }
        let xs = &mut x.data[n * CHANNELS * vol..(n + 1) * CHANNELS * vol];
        for (i, px) in clip.diff_frames.chunks_exact(CHANNELS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                xs[c * vol + i] = v as f64;
            }
        }
    }
    Ok(x)
}
