//! Dataset manifests: one JSON object per line, linking record ids to signal
//! files and their positive label indices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, SignalError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub path: String,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Build from entries, rejecting duplicate record ids.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.record_id.as_str()) {
                return Err(SignalError::Format(format!("duplicate record_id {:?}", e.record_id)));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every label index must fall inside a vocabulary of size `m`.
    pub fn validate_labels(&self, m: usize) -> Result<()> {
        for e in &self.entries {
            if let Some(&bad) = e.labels.iter().find(|&&l| l >= m) {
                return Err(SignalError::Format(format!(
                    "record {:?} has label index {bad} outside vocabulary of {m}",
                    e.record_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                SignalError::Format(format!("manifest line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        DatasetManifest::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)
                .map_err(|e| SignalError::Format(format!("manifest serialization: {e}")))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, labels: &[usize]) -> ManifestEntry {
        ManifestEntry { record_id: id.into(), path: format!("{id}.speg"), labels: labels.to_vec() }
    }

    #[test]
    fn round_trip_preserves_order_and_content() {
        let m = DatasetManifest::new(vec![entry("a", &[0, 2]), entry("b", &[]), entry("c", &[1])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(
            DatasetManifest::new(vec![entry("a", &[]), entry("a", &[])]),
            Err(SignalError::Format(_))
        ));
    }

    #[test]
    fn label_bounds_are_validated() {
        let m = DatasetManifest::new(vec![entry("a", &[0, 3])]).unwrap();
        assert!(m.validate_labels(4).is_ok());
        assert!(m.validate_labels(3).is_err());
    }

    #[test]
    fn malformed_line_is_reported_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"record_id\":\"a\",\"path\":\"a.speg\",\"labels\":[]}\nnot json\n").unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
