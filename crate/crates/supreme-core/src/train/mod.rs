//! Training and evaluation: supervised pre-training of the fusion model,
//! zero-shot scoring with AUROC reports, and frozen-feature linear probing.

mod dataset;
mod eval;
mod metrics;
mod pretrain;

pub use dataset::{resolve_labels, LabeledDataset};
pub use eval::{
    encode_features, evaluate_zeroshot, linear_probe, mean_val_auc, score_dataset, ProbeConfig,
    ProbeOutcome,
};
pub use metrics::{auroc, emit_metrics, ClassMetric, EvalReport};
pub use pretrain::{
    load_training_log, pretrain, write_training_log, EpochLog, PretrainOutcome, ScheduleConfig,
    TrainConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    /// AUROC is undefined without both a positive and a negative example.
    #[error("degenerate class: {positives} positives, {negatives} negatives")]
    DegenerateClass { positives: usize, negatives: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Op(#[from] crate::nn::NnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
