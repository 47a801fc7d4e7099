//! Report-to-label pipeline: free-text ECG reports are sent to an external
//! extraction service, the returned entities are filtered for certainty,
//! deduplicated by embedding similarity, mapped onto a standardized query
//! vocabulary, and finally written out as a binary label matrix.

mod client;
mod cluster;
mod extraction;
mod labels;
mod report;
mod vocab;

pub use client::{
    extract_batch, extract_entities, BatchExtraction, HttpLlmClient, LlmClient, ReplayClient,
    SkippedReport,
};
pub use cluster::{count_entities, dedup_entities, EntityCluster};
pub use extraction::{
    filter_uncertain, parse_extraction, user_prompt, ExtractionResult, SYSTEM_PROMPT,
};
pub use labels::{build_label_matrix, label_records, LabelMatrix};
pub use report::{preprocess_reports, RawReport};
pub use vocab::{map_cluster_to_vocabulary, map_to_vocabulary, overlap_analysis, OverlapPair, Vocabulary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntityError {
    /// Response JSON deviates from the required schema; carries the offending
    /// JSONPath-style location.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    /// A response stayed unparseable after the one permitted re-ask.
    #[error("extraction error for record {record_id}: {message}")]
    Extraction { record_id: String, message: String },
    /// Transport failure that survived the bounded retries.
    #[error("client error: {0}")]
    Client(String),
    /// A vector expected to be unit-norm is not.
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("empty vocabulary")]
    EmptyVocabulary,
    /// A label index is out of range for the vocabulary.
    #[error("index error: label {index} >= vocabulary size {m}")]
    Index { index: usize, m: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EntityError>;

/// Dot product of two unit vectors, accumulated in f64.
pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Unit-norm check at tolerance 1e-6, the precondition shared by every
/// similarity operation.
pub(crate) fn require_unit(context: &str, index: usize, v: &[f32]) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(EntityError::Normalization(format!(
            "{context}: vector {index} has norm {norm}, expected 1 within 1e-6"
        )));
    }
    Ok(())
}

pub(crate) fn require_threshold(name: &str, theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(EntityError::Config(format!("{name} must lie in (0, 1], got {theta}")));
    }
    Ok(())
}
