//! Gradient-boosted regression trees with binary log loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config("rounds, max_depth and min_samples_leaf must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    init: f64,
    learning_rate: f64,
    trees: Vec<Node>,
}

struct Fit<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
}

impl Fit<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        Node::Leaf(if h > 1e-12 { g / h } else { 0.0 })
    }

    /// Least-squares split on the residuals; returns (gain, feature, threshold).
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.x[0].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += self.grad[order[k]];
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if lo == hi || k + 1 < min_leaf || n - k - 1 < min_leaf {
                    continue;
                }
                let (nl, nr) = ((k + 1) as f64, (n - k - 1) as f64);
                let right = total - left;
                let gain = left * left / nl + right * right / nr - total * total / n as f64;
                if best.is_none_or(|b| gain > b.0 + 1e-12) {
                    best = Some((gain, f, 0.5 * (lo + hi)));
                }
            }
        }
        best.filter(|b| b.0 > 1e-12)
    }

    fn grow(&self, idx: &[usize], depth: usize) -> Node {
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return self.leaf(idx);
        }
        let Some((_, feature, threshold)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(&l, depth + 1)),
            right: Box::new(self.grow(&r, depth + 1)),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GradientBoosting {
    /// Fits on rows `x` with labels `y`; both classes must be present.
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &GbdtConfig) -> Result<Self> {
        cfg.validate()?;
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows must share a positive feature count".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::SingleClass);
        }
        let p0 = pos as f64 / y.len() as f64;
        let init = (p0 / (1.0 - p0)).ln();
        let mut score = vec![init; y.len()];
        let idx: Vec<usize> = (0..y.len()).collect();
        let mut trees = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            let p: Vec<f64> = score.iter().map(|&s| sigmoid(s)).collect();
            let grad: Vec<f64> = y.iter().zip(&p).map(|(&t, &q)| f64::from(u8::from(t)) - q).collect();
            let hess: Vec<f64> = p.iter().map(|q| q * (1.0 - q)).collect();
            let tree = Fit {
                x,
                grad: &grad,
                hess: &hess,
                cfg,
            }
            .grow(&idx, 0);
            for (s, row) in score.iter_mut().zip(x) {
                *s += cfg.learning_rate * tree.eval(row);
            }
            trees.push(tree);
        }
        Ok(Self {
            init,
            learning_rate: cfg.learning_rate,
            trees,
        })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        self.decision(row) > 0.0
    }
}
