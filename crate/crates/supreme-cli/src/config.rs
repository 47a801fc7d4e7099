//! Run configuration: one JSON file, dotted-path flag overrides, and a
//! resolved snapshot written beside every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use supreme_core::model::ModelConfig;
use supreme_core::signal::SplitSpec;
use supreme_core::train::{ProbeConfig, TrainConfig};

use crate::error::{CliError, Result};

/// Filesystem layout. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory that relative ECG record paths in the manifest resolve to.
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    /// Label matrix: written by `normalize`, read by `pretrain`/`eval`/`probe`.
    pub labels: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            manifest: "data/manifest.jsonl".into(),
            vocab: "data/vocabulary.txt".into(),
            embeddings: "data/embeddings.spem".into(),
            labels: "out/labels.jsonl".into(),
            checkpoint_dir: "out/checkpoints".into(),
            output_dir: "out".into(),
        }
    }
}

/// Similarity thresholds for the normalization pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Entities merge when cosine similarity reaches this value.
    pub theta_dup: f64,
    /// Clusters map to a vocabulary term only above this mean cosine.
    pub theta_map: f64,
    /// Overlap diagnostics report matches at or above this cosine.
    pub theta_overlap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { theta_dup: 0.8, theta_map: 0.75, theta_overlap: 0.95 }
    }
}

/// Train/val/test ratio triple; the shuffle seed comes from the run seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn to_spec(self, seed: u64) -> SplitSpec {
        SplitSpec { train: self.train, val: self.val, test: self.test, seed }
    }
}

/// Extraction service settings. The bearer token is never part of the
/// config; it is read from the SUPREME_LLM_TOKEN environment variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Chat-completions endpoint URL; required unless `replay_path` is set.
    pub endpoint: Option<String>,
    pub model: String,
    pub max_concurrency: usize,
    /// Recorded responses keyed by record id; bypasses the network.
    pub replay_path: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: None,
            model: "default".into(),
            max_concurrency: 4,
            replay_path: None,
        }
    }
}

/// Everything a run needs. Every command writes the resolved form of this
/// struct beside its outputs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub split: SplitRatios,
    pub thresholds: Thresholds,
    pub llm: LlmConfig,
}

impl RunConfig {
    /// Loads the config file (defaults when absent), applies `--set`
    /// overrides then the `--seed` flag, and validates the result. Keys
    /// that no config field consumes are rejected by path.
    pub fn load(path: Option<&Path>, seed: Option<u64>, sets: &[String]) -> Result<RunConfig> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("--config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("--config {}: {e}", p.display()))
                })?
            }
            None => Value::Object(Default::default()),
        };
        if !tree.is_object() {
            return Err(CliError::Config("config root must be a JSON object".into()));
        }
        for set in sets {
            let (key, raw) = set.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set {set:?}: expected KEY=VALUE"))
            })?;
            set_path(&mut tree, key, parse_value(raw))?;
        }
        if let Some(seed) = seed {
            set_path(&mut tree, "seed", Value::from(seed))?;
        }

        let config: RunConfig = serde_json::from_value(tree.clone())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let resolved = serde_json::to_value(&config)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        collect_unknown_keys(&tree, &resolved, String::new(), &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!(
                "unknown config key(s): {}",
                unknown.join(", ")
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.split
            .to_spec(self.seed)
            .validate()
            .map_err(|e| CliError::Config(format!("split: {e}")))?;
        for (key, theta) in [
            ("thresholds.theta_dup", self.thresholds.theta_dup),
            ("thresholds.theta_map", self.thresholds.theta_map),
            ("thresholds.theta_overlap", self.thresholds.theta_overlap),
        ] {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(CliError::Config(format!("{key} must lie in (0, 1], got {theta}")));
            }
        }
        if self.llm.max_concurrency == 0 {
            return Err(CliError::Config("llm.max_concurrency must be at least 1".into()));
        }
        if self.llm.model.is_empty() {
            return Err(CliError::Config("llm.model must be non-empty".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration snapshot for `command` into the
    /// output directory; byte-identical across reruns of the same config.
    pub fn write_snapshot(&self, command: &str) -> Result<PathBuf> {
        let dir = &self.paths.output_dir;
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{command}.config.json"));
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// `--set` values parse as JSON when possible (numbers, booleans, null,
/// quoted strings, arrays) and fall back to plain strings, so paths and
/// URLs need no quoting.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `tree[path] = value` for a dotted path, creating intermediate
/// objects. Descending into a non-object is an error.
fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cursor = tree;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("--set {path:?}: empty path segment")));
    }
    for segment in &segments[..segments.len() - 1] {
        let map = cursor.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("--set {path:?}: {segment:?} is not an object"))
        })?;
        cursor = map
            .entry(segment.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let map = cursor.as_object_mut().ok_or_else(|| {
        CliError::Config(format!("--set {path:?}: parent of the final key is not an object"))
    })?;
    map.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Records every key present in `input` that the resolved config does not
/// echo back: those were silently ignored by deserialization, which means a
/// typo. Only objects recurse; type mismatches surface earlier as serde
/// errors.
fn collect_unknown_keys(input: &Value, resolved: &Value, prefix: String, out: &mut Vec<String>) {
    let (Value::Object(input), Value::Object(resolved)) = (input, resolved) else {
        return;
    };
    for (key, value) in input {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match resolved.get(key) {
            None => out.push(path),
            Some(r) => collect_unknown_keys(value, r, path, out),
        }
    }
}
