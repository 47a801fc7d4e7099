//! Supervised pre-training loop.
//!
//! Each epoch shuffles the training set with a per-epoch named RNG stream,
//! iterates mini-batches (partial final batch kept), and takes one AdamW
//! step per batch at the cosine-warm-restart learning rate for the global
//! step counter. Validation mean AUC drives strictly-greater best tracking
//! with patience-based early stopping; the best parameters are restored
//! into the model before returning.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::model::{Mode, SupremeModel};
use crate::nn::ops::bce_with_logits;
use crate::nn::{AdamW, CosineRestartSchedule, Tape, Tensor};
use crate::rng::RngFactory;

use super::eval::mean_val_auc;
use super::{LabeledDataset, Result, TrainError};

/// Cosine warm-restart shape: first cycle length, cycle growth factor, and
/// learning-rate floor. The ceiling is the optimizer learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub t0: u64,
    pub t_mult: u64,
    pub eta_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { t0: 5000, t_mult: 1, eta_min: 1e-8 }
    }
}

/// Pre-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be positive".into()));
        }
        if self.schedule.t0 == 0 || self.schedule.t_mult == 0 {
            return Err(TrainError::Config("schedule t0 and t_mult must be positive".into()));
        }
        if !(self.schedule.eta_min >= 0.0 && self.schedule.eta_min <= self.lr) {
            return Err(TrainError::Config(format!(
                "schedule eta_min {} must lie in [0, lr]",
                self.schedule.eta_min
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mean_auc: Option<f64>,
    pub lr: f64,
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Epoch whose parameters the model now holds (0 if no epoch ever
    /// produced a usable validation score).
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Strictly-greater best tracking with patience. `observe` returns true
/// when the run should stop (patience consecutive non-improving epochs).
#[derive(Debug)]
pub(super) struct EarlyStopper {
    patience: usize,
    stale: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, stale: 0, best: None, best_epoch: 0 }
    }

    /// Feeds one epoch's validation score. None (all classes degenerate)
    /// never improves on anything, including a previous None.
    pub fn observe(&mut self, epoch: usize, val: Option<f64>) -> bool {
        let improved = match (val, self.best) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch && self.best.is_some()
    }
}

/// Trains `model` on `train`, validating on `val` after every epoch.
///
/// `query_embeddings` must be `[M, embed_dim]` with M equal to both splits'
/// class count. On return the model holds the parameters of the best
/// validation epoch.
pub fn pretrain(
    model: &mut SupremeModel<f32>,
    train: &LabeledDataset,
    val: &LabeledDataset,
    query_embeddings: &Tensor<f32>,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    check_queries(model, train.m(), query_embeddings)?;
    if val.m() != train.m() {
        return Err(TrainError::Config(format!(
            "train has {} classes but val has {}",
            train.m(),
            val.m()
        )));
    }
    if train.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(TrainError::Data("validation split is empty".into()));
    }

    let schedule = CosineRestartSchedule::new(
        config.lr,
        config.schedule.eta_min,
        config.schedule.t0,
        config.schedule.t_mult,
    )?;
    let mut opt = AdamW::new(model.params(), 0.9, 0.999, 1e-8, config.weight_decay);
    let factory = RngFactory::new(config.seed);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params: Option<Vec<Tensor<f32>>> = None;
    let mut log = Vec::new();
    let mut global_step: u64 = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = factory.substream("shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = factory.substream("dropout", epoch as u64);
        let mut droppath_rng = factory.substream("droppath", epoch as u64);

        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        let mut last_lr = schedule.lr_at(global_step);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let mut mode = Mode::Train { dropout: &mut dropout_rng, droppath: &mut droppath_rng };
            let logits = model.forward(&mut tape, &binding, &x, query_embeddings, &mut mode)?;
            let loss = bce_with_logits(&mut tape, logits, &y)?;
            let loss_value = f64::from(tape.value(loss).data()[0]);
            if !loss_value.is_finite() {
                return Err(TrainError::Data(format!(
                    "non-finite training loss at epoch {epoch}, step {global_step}"
                )));
            }
            let grads = tape.backward(loss);
            model.accumulate_grads(&binding, &grads);
            last_lr = schedule.lr_at(global_step);
            opt.step(model.params_mut(), last_lr)?;
            global_step += 1;
            loss_sum += loss_value * chunk.len() as f64;
            sample_count += chunk.len();
        }
        let train_loss = loss_sum / sample_count as f64;

        let val_mean_auc = mean_val_auc(model, val, query_embeddings, config.batch_size)?;
        log.push(EpochLog { epoch, train_loss, val_mean_auc, lr: last_lr });

        let stop = stopper.observe(epoch, val_mean_auc);
        if stopper.improved_at(epoch) {
            best_params = Some(model.params().iter().map(|p| p.value.clone()).collect());
        }
        if stop {
            break;
        }
    }

    if let Some(best) = best_params {
        for (param, value) in model.params_mut().iter_mut().zip(best) {
            param.value = value;
        }
    }
    Ok(PretrainOutcome {
        best_epoch: stopper.best_epoch,
        best_val_auc: stopper.best,
        epochs_run,
        log,
    })
}

/// Validates that the query embedding matrix matches the model input width
/// and the dataset class count.
pub(super) fn check_queries(
    model: &SupremeModel<f32>,
    m: usize,
    query_embeddings: &Tensor<f32>,
) -> Result<()> {
    let shape = query_embeddings.shape();
    if shape.len() != 2 || shape[1] != model.config().embed_dim {
        return Err(TrainError::Config(format!(
            "query embeddings must be [M, {}], got {shape:?}",
            model.config().embed_dim
        )));
    }
    if shape[0] != m {
        return Err(TrainError::Config(format!(
            "{} query embeddings for {m} classes",
            shape[0]
        )));
    }
    Ok(())
}

/// Appends nothing, overwrites: one JSON object per epoch, in order.
pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for line in log {
        serde_json::to_writer(&mut out, line).map_err(|e| TrainError::Data(e.to_string()))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a training log written by `write_training_log`.
pub fn load_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Data(e.to_string())))
        .collect()
}
