//! Deterministic train/val/test splitting.

use rand::seq::SliceRandom;

use super::{DatasetManifest, Result, SignalError};
use crate::rng::RngFactory;

/// Split ratios plus the shuffle seed. Ratios must be non-negative and sum
/// to 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ratios = [self.train, self.val, self.test];
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(SignalError::DegenerateSplit(format!("negative or non-finite ratio in {ratios:?}")));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SignalError::DegenerateSplit(format!("ratios {ratios:?} sum to {sum}, not 1")));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Shuffle the manifest rows with the spec's seed, then cut contiguous
/// train/val/test slices. Train and val sizes use round-half-up of
/// n * ratio (val clamped so train+val <= n); the remainder is test. Any
/// slot with a positive ratio but zero rows is degenerate.
pub fn split_dataset(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let n = manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngFactory::new(spec.seed).stream("shuffle");
    order.shuffle(&mut rng);

    let n_train = round_half_up(n as f64 * spec.train).min(n);
    let n_val = round_half_up(n as f64 * spec.val).min(n - n_train);
    let n_test = n - n_train - n_val;

    for (count, ratio, name) in [
        (n_train, spec.train, "train"),
        (n_val, spec.val, "val"),
        (n_test, spec.test, "test"),
    ] {
        if ratio > 0.0 && count == 0 {
            return Err(SignalError::DegenerateSplit(format!(
                "{name} ratio {ratio} yields zero of {n} records"
            )));
        }
    }

    let take = |idx: &[usize]| DatasetManifest {
        entries: idx.iter().map(|&i| manifest.entries[i].clone()).collect(),
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}
