//! Raw report records and the pre-extraction filter.

use serde::{Deserialize, Serialize};

/// One free-text ECG report, keyed to its signal record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReport {
    pub record_id: String,
    pub text: String,
}

impl RawReport {
    pub fn new(record_id: impl Into<String>, text: impl Into<String>) -> Self {
        RawReport { record_id: record_id.into(), text: text.into() }
    }
}

/// Drop reports that are empty, whitespace-only, or shorter than three
/// whitespace-delimited words; order is preserved.
pub fn preprocess_reports(raw: Vec<RawReport>) -> Vec<RawReport> {
    raw.into_iter().filter(|r| r.text.split_whitespace().count() >= 3).collect()
}
