//! ECG signal I/O: binary records, dataset manifests, NaN repair, and
//! deterministic splits.

mod manifest;
mod record;
mod repair;
mod split;

pub use manifest::{DatasetManifest, ManifestEntry};
pub use record::{EcgRecord, RECORD_MAGIC, RECORD_VERSION};
pub use repair::repair_nonfinite;
pub use split::{split_dataset, SplitSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("lead {lead} has only {finite} finite samples, need at least 7 to repair")]
    IrreparableLead { lead: usize, finite: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;
