//! The binary label matrix tying records to vocabulary indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cluster::EntityCluster;
use super::extraction::{filter_uncertain, ExtractionResult};
use super::{EntityError, Result};

/// Sparse multi-label matrix: one row of sorted unique positive vocabulary
/// indices per record, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    m: usize,
    record_ids: Vec<String>,
    rows: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RowLine {
    record_id: String,
    positives: Vec<usize>,
}

impl LabelMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn record_ids(&self) -> &[String] {
        &self.record_ids
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    /// Row lookup by record id.
    pub fn row_for(&self, record_id: &str) -> Option<&[usize]> {
        self.record_ids
            .iter()
            .position(|id| id == record_id)
            .map(|i| self.rows[i].as_slice())
    }

    /// JSONL: a header line `{"n", "m"}` followed by one
    /// `{"record_id", "positives"}` line per record.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = json!({"n": self.n(), "m": self.m});
        writeln!(w, "{header}")?;
        for (id, row) in self.record_ids.iter().zip(&self.rows) {
            let line = serde_json::to_string(&RowLine {
                record_id: id.clone(),
                positives: row.clone(),
            })
            .expect("label row serializes");
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| EntityError::Format("label matrix file is empty".into()))??;
        let header: serde_json::Value = serde_json::from_str(&header_line)
            .map_err(|e| EntityError::Format(format!("label matrix header: {e}")))?;
        let n = header
            .get("n")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| EntityError::Format("label matrix header missing n".into()))?
            as usize;
        let m = header
            .get("m")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| EntityError::Format("label matrix header missing m".into()))?
            as usize;

        let mut record_ids = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RowLine = serde_json::from_str(&line)
                .map_err(|e| EntityError::Format(format!("label matrix line {}: {e}", lineno + 2)))?;
            for window in row.positives.windows(2) {
                if window[0] >= window[1] {
                    return Err(EntityError::Format(format!(
                        "label matrix line {}: positives not sorted unique",
                        lineno + 2
                    )));
                }
            }
            if let Some(&max) = row.positives.last() {
                if max >= m {
                    return Err(EntityError::Index { index: max, m });
                }
            }
            record_ids.push(row.record_id);
            rows.push(row.positives);
        }
        if rows.len() != n {
            return Err(EntityError::Format(format!(
                "label matrix header says n={n} but {} rows follow",
                rows.len()
            )));
        }
        Ok(LabelMatrix { m, record_ids, rows })
    }
}

/// Build the matrix from per-record mapped vocabulary indices. Rows are
/// deduplicated and sorted; records with no mapped entities keep an empty
/// row.
pub fn build_label_matrix(
    mapped: &[(String, Vec<usize>)],
    m: usize,
) -> Result<LabelMatrix> {
    if m == 0 {
        return Err(EntityError::EmptyVocabulary);
    }
    let mut record_ids = Vec::with_capacity(mapped.len());
    let mut rows = Vec::with_capacity(mapped.len());
    for (record_id, indices) in mapped {
        let mut row = indices.clone();
        row.sort_unstable();
        row.dedup();
        if let Some(&max) = row.last() {
            if max >= m {
                return Err(EntityError::Index { index: max, m });
            }
        }
        record_ids.push(record_id.clone());
        rows.push(row);
    }
    Ok(LabelMatrix { m, record_ids, rows })
}

/// Join extraction results with cluster mappings: each record's certain
/// entities vote for the vocabulary index their cluster mapped to. Entities
/// in unmapped clusters contribute nothing.
pub fn label_records(
    results: &[ExtractionResult],
    clusters: &[EntityCluster],
    mappings: &[Option<(usize, f64)>],
) -> Result<Vec<(String, Vec<usize>)>> {
    if clusters.len() != mappings.len() {
        return Err(EntityError::Config(format!(
            "{} clusters but {} mappings",
            clusters.len(),
            mappings.len()
        )));
    }
    let mut entity_to_vocab: HashMap<&str, usize> = HashMap::new();
    for (cluster, mapping) in clusters.iter().zip(mappings) {
        if let Some((vocab_idx, _)) = mapping {
            for (member, _) in &cluster.members {
                entity_to_vocab.insert(member.as_str(), *vocab_idx);
            }
        }
    }
    Ok(results
        .iter()
        .map(|result| {
            let indices = filter_uncertain(result)
                .into_iter()
                .filter_map(|entity| entity_to_vocab.get(entity.as_str()).copied())
                .collect();
            (result.record_id.clone(), indices)
        })
        .collect())
}
