use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{ExperimentData, ParticipantData};
use super::split::FoldSplit;
use crate::error::{Error, Result};
use crate::evaluation::stitch;
use crate::model::{batch_from_clips, build_model, mse, Adam, Model, ModelConfig};
use crate::preprocess::{NormalizedClip, TargetKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub target_kind: TargetKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 30,
            learning_rate: 1e-3,
            seeds: vec![0, 1, 2],
            target_kind: TargetKind::Tonic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch_size ({}) and epochs ({}) must be positive",
                self.batch_size, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// Loss curves of one fold. `val_loss[0]` is measured before the first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }
}

/// Counts batch composition checks; any window of a held-out participant in a
/// training batch is a violation.
#[derive(Debug, Default)]
pub struct LeakageMonitor {
    checks: AtomicU64,
    violations: AtomicU64,
}

impl LeakageMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check_batch(&self, fold: &FoldSplit, batch: &[&NormalizedClip]) -> Result<()> {
        self.checks.fetch_add(1, Ordering::Relaxed);
        if let Some(w) = batch
            .iter()
            .find(|w| w.origin.session_id == fold.test_id || w.origin.session_id == fold.val_id)
        {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Protocol(format!(
                "window {} of held-out participant {} in a training batch of the fold testing {}",
                w.window_index, w.origin.session_id, fold.test_id
            )));
        }
        Ok(())
    }

    pub fn checks(&self) -> u64 {
        self.checks.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }
}

pub struct FoldOutcome {
    pub model: Model,
    pub history: History,
}

fn participant<'a>(data: &'a ExperimentData, id: &str) -> Result<&'a ParticipantData> {
    data.get(id)
        .ok_or_else(|| Error::Config(format!("participant {id} is not in the dataset")))
}

fn check_target(p: &ParticipantData, kind: TargetKind) -> Result<()> {
    match p.target_kind() {
        Some(k) if k != kind => Err(Error::Config(format!(
            "{} is labelled for the {} target but training asks for {}",
            p.id,
            k.as_str(),
            kind.as_str()
        ))),
        _ => Ok(()),
    }
}

/// Mean squared error of an inference-mode model over `clips`.
pub fn mean_loss(model: &Model, clips: &[&NormalizedClip], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in clips.chunks(batch_size.max(1)) {
        let pred = model.predict(chunk)?;
        let labels: Vec<Vec<f64>> = chunk.iter().map(|c| c.labels.clone()).collect();
        let (loss, _) = mse(&pred, &labels)?;
        let n: usize = labels.iter().map(|l| l.len()).sum();
        total += loss * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    Ok(total / count as f64)
}

/// Trains one fold and keeps the weights with the lowest validation loss.
pub fn train_fold(
    data: &ExperimentData,
    fold: &FoldSplit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    monitor: &LeakageMonitor,
) -> Result<FoldOutcome> {
    config.validate()?;
    let mut train: Vec<&NormalizedClip> = Vec::new();
    for id in &fold.train_ids {
        let p = participant(data, id)?;
        check_target(p, config.target_kind)?;
        train.extend(p.windows.iter());
    }
    let val_p = participant(data, &fold.val_id)?;
    check_target(val_p, config.target_kind)?;
    let val: Vec<&NormalizedClip> = val_p.windows.iter().collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData(format!(
            "fold testing {}: {} training and {} validation windows",
            fold.test_id,
            train.len(),
            val.len()
        )));
    }

    let mut model = build_model(&ModelConfig {
        init_seed: seed,
        ..model_config.clone()
    })?;
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546);
    let mut history = History {
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: vec![mean_loss(&model, &val, config.batch_size)?],
        best_epoch: 0,
    };
    let mut best: Option<Model> = None;

    for epoch in 1..=config.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in train.chunks(config.batch_size).enumerate() {
            monitor.check_batch(fold, batch)?;
            let x = batch_from_clips(batch, model.config())?;
            let labels: Vec<Vec<f64>> = batch.iter().map(|c| c.labels.clone()).collect();
            model.zero_grad();
            let loss = model.mse_step(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    lr: config.learning_rate,
                    epoch,
                    batch: b,
                });
            }
            adam.step(&mut model.params_mut());
            sum += loss * batch.len() as f64;
        }
        history.train_loss.push(sum / train.len() as f64);
        let v = mean_loss(&model, &val, config.batch_size)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                lr: config.learning_rate,
                epoch,
                batch: train.len().div_ceil(config.batch_size),
            });
        }
        history.val_loss.push(v);
        if history.best_epoch == 0 || v < history.val_loss[history.best_epoch] {
            history.best_epoch = epoch;
            best = Some(model.clone());
        }
        log::debug!(
            "fold {} seed {seed} epoch {epoch}: train {:.4} val {v:.4}",
            fold.test_id,
            history.train_loss[epoch - 1]
        );
    }
    Ok(FoldOutcome {
        model: best.expect("at least one epoch"),
        history,
    })
}

/// Stitched predictions over every window of `p`, in time order.
pub fn predict_participant(model: &Model, p: &ParticipantData, batch_size: usize) -> Result<Vec<f64>> {
    let clips: Vec<&NormalizedClip> = p.windows.iter().collect();
    let mut parts = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch_size.max(1)) {
        for (c, pred) in chunk.iter().zip(model.predict(chunk)?) {
            parts.push((c.origin.start_index, pred));
        }
    }
    stitch(&parts)
}
