//! Zero-shot evaluation and linear probing.
//!
//! Zero-shot evaluation runs the trained model in eval mode over a labeled
//! dataset with a prompted query set, converts logits to probabilities, and
//! scores each class with AUROC; classes without both a positive and a
//! negative in the split are reported as skipped. The linear probe freezes
//! the encoder, mean-pools its token features, and trains a single linear
//! layer on a fraction of the training split.

use serde::{Deserialize, Serialize};

use crate::model::{Mode, SupremeModel};
use crate::nn::ops::{self, bce_with_logits, sigmoid_scalar};
use crate::nn::{AdamW, CosineRestartSchedule, Parameter, Tape, Tensor};
use crate::rng::RngFactory;

use super::metrics::{auroc, ClassMetric, EvalReport};
use super::pretrain::{check_queries, EarlyStopper};
use super::{LabeledDataset, Result, TrainError};

/// Class probabilities for every record in `ds`, in dataset order: row i is
/// sigmoid(logits) for record i against the M queries. Eval mode, batches
/// taken in order.
pub fn score_dataset(
    model: &SupremeModel<f32>,
    ds: &LabeledDataset,
    query_embeddings: &Tensor<f32>,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    check_queries(model, ds.m(), query_embeddings)?;
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut scores = Vec::with_capacity(ds.len());
    for chunk in indices.chunks(batch_size) {
        let (x, _) = ds.batch(chunk)?;
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let mut mode = Mode::Eval;
        let logits = model.forward(&mut tape, &binding, &x, query_embeddings, &mut mode)?;
        let values = tape.value(logits);
        for row in 0..chunk.len() {
            let start = row * ds.m();
            scores.push(
                values.data()[start..start + ds.m()]
                    .iter()
                    .map(|&z| f64::from(sigmoid_scalar(z)))
                    .collect(),
            );
        }
    }
    Ok(scores)
}

/// Per-class (auc, positives) against a score matrix in dataset order.
/// Classes with no positive or no negative yield auc None.
fn per_class_auc(scores: &[Vec<f64>], ds: &LabeledDataset) -> Result<Vec<(Option<f64>, usize)>> {
    let mut out = Vec::with_capacity(ds.m());
    for j in 0..ds.m() {
        let labels = ds.class_column(j)?;
        let column: Vec<f64> = scores.iter().map(|row| row[j]).collect();
        let positives = labels.iter().filter(|&&l| l).count();
        let auc = match auroc(&column, &labels) {
            Ok(a) => Some(a),
            Err(TrainError::DegenerateClass { .. }) => None,
            Err(e) => return Err(e),
        };
        out.push((auc, positives));
    }
    Ok(out)
}

/// Mean AUC over the non-degenerate classes of `ds`, or None when every
/// class is degenerate in this split. Used for validation during training.
pub fn mean_val_auc(
    model: &SupremeModel<f32>,
    ds: &LabeledDataset,
    query_embeddings: &Tensor<f32>,
    batch_size: usize,
) -> Result<Option<f64>> {
    let scores = score_dataset(model, ds, query_embeddings, batch_size)?;
    let per_class = per_class_auc(&scores, ds)?;
    let scored: Vec<f64> = per_class.iter().filter_map(|(a, _)| *a).collect();
    Ok(if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    })
}

/// Zero-shot evaluation: score `ds` against the prompted queries and report
/// per-class AUROC. `class_names` labels the report rows and must align
/// with the embedding rows.
pub fn evaluate_zeroshot(
    model: &SupremeModel<f32>,
    ds: &LabeledDataset,
    class_names: &[String],
    query_embeddings: &Tensor<f32>,
    batch_size: usize,
) -> Result<EvalReport> {
    if class_names.len() != ds.m() {
        return Err(TrainError::Config(format!(
            "{} class names for {} classes",
            class_names.len(),
            ds.m()
        )));
    }
    let scores = score_dataset(model, ds, query_embeddings, batch_size)?;
    let per_class = per_class_auc(&scores, ds)?;
    Ok(EvalReport::new(
        class_names
            .iter()
            .zip(per_class)
            .map(|(name, (auc, positives))| ClassMetric {
                query: name.clone(),
                auc,
                positives,
            })
            .collect(),
    ))
}

/// Frozen-encoder features: mean over the token axis of the projected ECG
/// representation, one `latent`-width row per record, eval mode.
pub fn encode_features(
    model: &SupremeModel<f32>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut features = Vec::with_capacity(ds.len());
    for chunk in indices.chunks(batch_size) {
        let (x, _) = ds.batch(chunk)?;
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let mut mode = Mode::Eval;
        let encoded = model.encode_ecg(&mut tape, &binding, &x, &mut mode)?;
        let values = tape.value(encoded);
        let &[_, s, d] = values.shape() else {
            return Err(TrainError::Data("encoder output must be [B, S, D']".into()));
        };
        // Mean over the token axis: no gradient is needed, pool the values.
        for row in 0..chunk.len() {
            let mut pooled = vec![0.0f32; d];
            for tok in 0..s {
                let start = (row * s + tok) * d;
                for (acc, &v) in pooled.iter_mut().zip(&values.data()[start..start + d]) {
                    *acc += v;
                }
            }
            for v in &mut pooled {
                *v /= s as f32;
            }
            features.push(pooled);
        }
    }
    Ok(features)
}

/// Linear probe hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 1e-3,
            weight_decay: 1e-8,
            warmup_steps: 5,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

/// Final state of a probe run.
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub report: EvalReport,
    pub best_val_auc: Option<f64>,
    pub epochs_run: usize,
    pub train_fraction_size: usize,
}

/// Linear warmup into a single cosine arc spanning the remaining planned
/// steps.
struct WarmupCosine {
    warmup: u64,
    lr: f64,
    cosine: CosineRestartSchedule,
}

impl WarmupCosine {
    fn new(lr: f64, warmup: u64, planned_steps: u64) -> Result<Self> {
        let tail = planned_steps.saturating_sub(warmup).max(1);
        Ok(WarmupCosine { warmup, lr, cosine: CosineRestartSchedule::new(lr, 1e-8, tail, 1)? })
    }

    fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup {
            self.lr * (step + 1) as f64 / self.warmup as f64
        } else {
            self.cosine.lr_at(step - self.warmup)
        }
    }
}

/// Trains a linear classifier on frozen mean-pooled encoder features.
///
/// Uses `floor(train.len() * fraction)` training records (an empty subset is
/// a config error), validates on `val` each epoch with patience-based early
/// stopping, and reports per-class AUROC on `test` with the best weights.
/// The encoder itself is never updated.
pub fn linear_probe(
    model: &SupremeModel<f32>,
    train: &LabeledDataset,
    val: &LabeledDataset,
    test: &LabeledDataset,
    class_names: &[String],
    fraction: f64,
    config: &ProbeConfig,
) -> Result<ProbeOutcome> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TrainError::Config(format!(
            "probe fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.patience == 0 {
        return Err(TrainError::Config(
            "probe batch_size, max_epochs, and patience must be positive".into(),
        ));
    }
    if !(config.lr > 0.0) || config.warmup_steps == 0 {
        return Err(TrainError::Config("probe lr and warmup_steps must be positive".into()));
    }
    let m = train.m();
    if val.m() != m || test.m() != m {
        return Err(TrainError::Config("probe splits disagree on class count".into()));
    }
    if class_names.len() != m {
        return Err(TrainError::Config(format!(
            "{} class names for {m} classes",
            class_names.len()
        )));
    }

    let k = (train.len() as f64 * fraction).floor() as usize;
    if k == 0 {
        return Err(TrainError::Config(format!(
            "probe fraction {fraction} of {} training records selects no samples",
            train.len()
        )));
    }
    let factory = RngFactory::new(config.seed);
    let mut subset: Vec<usize> = (0..train.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = factory.substream("probe-subset", 0);
        subset.shuffle(&mut rng);
    }
    subset.truncate(k);

    // Features are computed once; the encoder is read-only from here on.
    let train_feats = encode_features(model, train, config.batch_size)?;
    let val_feats = encode_features(model, val, config.batch_size)?;
    let test_feats = encode_features(model, test, config.batch_size)?;

    let d = model.config().latent;
    let mut probe = vec![
        Parameter::new("probe.weight", Tensor::<f32>::zeros(&[d, m])),
        Parameter::new("probe.bias", Tensor::<f32>::zeros(&[m])),
    ];
    let mut opt = AdamW::new(&probe, 0.9, 0.999, 1e-8, config.weight_decay);
    let planned = (k as u64).div_ceil(config.batch_size as u64) * config.max_epochs as u64;
    let schedule = WarmupCosine::new(config.lr, config.warmup_steps, planned)?;

    let mut stopper = EarlyStopper::new(config.patience);
    let mut best: Option<Vec<Tensor<f32>>> = None;
    let mut global_step = 0u64;
    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let mut order = subset.clone();
        {
            use rand::seq::SliceRandom;
            let mut rng = factory.substream("probe-shuffle", epoch as u64);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(config.batch_size) {
            let x = feature_batch(&train_feats, chunk, d);
            let y = target_batch(train.labels(), chunk, m);
            let mut tape = Tape::new();
            let w = tape.leaf(probe[0].value.clone());
            let b = tape.leaf(probe[1].value.clone());
            let xv = tape.constant(x);
            let logits = ops::linear(&mut tape, xv, w, b)?;
            let loss = bce_with_logits(&mut tape, logits, &y)?;
            let grads = tape.backward(loss);
            for (param, var) in probe.iter_mut().zip([w, b]) {
                if let Some(g) = grads.get(var) {
                    param.grad = param.grad.zip(g, |a, b| a + b);
                }
            }
            opt.step(&mut probe, schedule.lr_at(global_step))?;
            global_step += 1;
        }

        let val_auc = probe_mean_auc(&probe, &val_feats, val, d)?;
        let stop = stopper.observe(epoch, val_auc);
        if stopper.improved_at(epoch) {
            best = Some(probe.iter().map(|p| p.value.clone()).collect());
        }
        if stop {
            break;
        }
    }
    if let Some(best) = best {
        for (param, value) in probe.iter_mut().zip(best) {
            param.value = value;
        }
    }

    let scores = probe_scores(&probe, &test_feats, d, m);
    let per_class = per_class_auc(&scores, test)?;
    let report = EvalReport::new(
        class_names
            .iter()
            .zip(per_class)
            .map(|(name, (auc, positives))| ClassMetric {
                query: name.clone(),
                auc,
                positives,
            })
            .collect(),
    );
    Ok(ProbeOutcome {
        report,
        best_val_auc: stopper.best,
        epochs_run,
        train_fraction_size: k,
    })
}

fn feature_batch(features: &[Vec<f32>], indices: &[usize], d: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(&features[i]);
    }
    Tensor::from_vec(&[indices.len(), d], data)
}

fn target_batch(labels: &[Vec<usize>], indices: &[usize], m: usize) -> Tensor<f32> {
    let mut data = vec![0.0f32; indices.len() * m];
    for (row, &i) in indices.iter().enumerate() {
        for &j in &labels[i] {
            data[row * m + j] = 1.0;
        }
    }
    Tensor::from_vec(&[indices.len(), m], data)
}

/// Probe probabilities for every feature row: sigmoid(xW + b).
fn probe_scores(
    probe: &[Parameter<f32>],
    features: &[Vec<f32>],
    d: usize,
    m: usize,
) -> Vec<Vec<f64>> {
    let w = probe[0].value.data();
    let b = probe[1].value.data();
    features
        .iter()
        .map(|row| {
            (0..m)
                .map(|j| {
                    let z: f32 =
                        (0..d).map(|i| row[i] * w[i * m + j]).sum::<f32>() + b[j];
                    f64::from(sigmoid_scalar(z))
                })
                .collect()
        })
        .collect()
}

fn probe_mean_auc(
    probe: &[Parameter<f32>],
    features: &[Vec<f32>],
    ds: &LabeledDataset,
    d: usize,
) -> Result<Option<f64>> {
    let scores = probe_scores(probe, features, d, ds.m());
    let per_class = per_class_auc(&scores, ds)?;
    let scored: Vec<f64> = per_class.iter().filter_map(|(a, _)| *a).collect();
    Ok(if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    })
}
