//! Labeled dataset views and batch tensor assembly.
//!
//! Training and evaluation consume `LabeledDataset`, a borrowed, validated
//! pairing of ECG records with per-record positive label indices against a
//! fixed vocabulary size. Batches are materialized as `[B, L, T]` signal
//! tensors and `[B, M]` binary target tensors.

use std::collections::HashMap;

use crate::entities::LabelMatrix;
use crate::nn::Tensor;
use crate::signal::{DatasetManifest, EcgRecord};

use super::{Result, TrainError};

/// ECG records paired with their positive label indices (one list per
/// record, each index < m). Borrows the caller's storage.
#[derive(Debug, Clone, Copy)]
pub struct LabeledDataset<'a> {
    records: &'a [EcgRecord],
    labels: &'a [Vec<usize>],
    m: usize,
}

impl<'a> LabeledDataset<'a> {
    pub fn new(records: &'a [EcgRecord], labels: &'a [Vec<usize>], m: usize) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(TrainError::Data(format!(
                "{} records vs {} label rows",
                records.len(),
                labels.len()
            )));
        }
        if m == 0 {
            return Err(TrainError::Config("label space must be non-empty".into()));
        }
        for (i, row) in labels.iter().enumerate() {
            if let Some(&bad) = row.iter().find(|&&j| j >= m) {
                return Err(TrainError::Data(format!(
                    "record {i} ({}): label index {bad} out of range for m={m}",
                    records[i].record_id
                )));
            }
        }
        Ok(LabeledDataset { records, labels, m })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn records(&self) -> &'a [EcgRecord] {
        self.records
    }

    pub fn labels(&self) -> &'a [Vec<usize>] {
        self.labels
    }

    /// Signal and target tensors for the records at `indices`, in order:
    /// `[B, L, T]` and `[B, M]`. Every record must share the same lead
    /// count and length.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if indices.is_empty() {
            return Err(TrainError::Data("empty batch".into()));
        }
        let first = &self.records[indices[0]];
        let (l, t) = (first.leads(), first.samples());
        let mut x = Vec::with_capacity(indices.len() * l * t);
        let mut y = vec![0.0f32; indices.len() * self.m];
        for (row, &i) in indices.iter().enumerate() {
            let r = &self.records[i];
            if r.leads() != l || r.samples() != t {
                return Err(TrainError::Data(format!(
                    "record {}: shape [{}, {}] differs from batch shape [{l}, {t}]",
                    r.record_id,
                    r.leads(),
                    r.samples()
                )));
            }
            x.extend_from_slice(r.data());
            for &j in &self.labels[i] {
                y[row * self.m + j] = 1.0;
            }
        }
        Ok((
            Tensor::from_vec(&[indices.len(), l, t], x),
            Tensor::from_vec(&[indices.len(), self.m], y),
        ))
    }

    /// Boolean label column for class `j` across all records, in dataset
    /// order.
    pub fn class_column(&self, j: usize) -> Result<Vec<bool>> {
        if j >= self.m {
            return Err(TrainError::Data(format!("class {j} out of range for m={}", self.m)));
        }
        Ok(self.labels.iter().map(|row| row.contains(&j)).collect())
    }
}

/// Resolves per-record label rows for every manifest entry.
///
/// When a label matrix is supplied it is authoritative: every manifest
/// record must have a row in it (joined by record id) and the manifest's
/// own label lists are ignored. Without a matrix the manifest labels are
/// used directly. All indices are validated against `m`.
pub fn resolve_labels(
    manifest: &DatasetManifest,
    matrix: Option<&LabelMatrix>,
    m: usize,
) -> Result<Vec<Vec<usize>>> {
    let rows: Vec<Vec<usize>> = match matrix {
        Some(mat) => {
            if mat.m() != m {
                return Err(TrainError::Config(format!(
                    "label matrix has m={} but {} classes were requested",
                    mat.m(),
                    m
                )));
            }
            let by_id: HashMap<&str, &[usize]> = mat
                .record_ids()
                .iter()
                .zip(mat.rows())
                .map(|(id, row)| (id.as_str(), row.as_slice()))
                .collect();
            manifest
                .entries
                .iter()
                .map(|e| {
                    by_id
                        .get(e.record_id.as_str())
                        .map(|row| row.to_vec())
                        .ok_or_else(|| {
                            TrainError::Data(format!(
                                "record {} has no row in the label matrix",
                                e.record_id
                            ))
                        })
                })
                .collect::<Result<_>>()?
        }
        None => manifest.entries.iter().map(|e| e.labels.clone()).collect(),
    };
    for (row, entry) in rows.iter().zip(&manifest.entries) {
        if let Some(&bad) = row.iter().find(|&&j| j >= m) {
            return Err(TrainError::Data(format!(
                "record {}: label index {bad} out of range for m={m}",
                entry.record_id
            )));
        }
    }
    Ok(rows)
}
