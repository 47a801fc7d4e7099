//! The six pipeline commands. Each one validates its inputs up front,
//! orchestrates library calls, writes deterministic outputs plus a resolved
//! config snapshot, and reports progress on stderr.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use supreme_core::embed::TermEmbeddingStore;
use supreme_core::entities::{
    build_label_matrix, count_entities, dedup_entities, extract_batch, label_records,
    map_cluster_to_vocabulary, overlap_analysis, preprocess_reports, ExtractionResult,
    HttpLlmClient, LabelMatrix, LlmClient, OverlapPair, RawReport, ReplayClient, Vocabulary,
};
use supreme_core::model::SupremeModel;
use supreme_core::nn::Tensor;
use supreme_core::signal::{repair_nonfinite, split_dataset, DatasetManifest, EcgRecord};
use supreme_core::train::{
    emit_metrics, evaluate_zeroshot, linear_probe, pretrain, resolve_labels, write_training_log,
    EvalReport, LabeledDataset,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Fails with the config key path when a referenced file is missing.
fn preflight(key: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key}: file not found: {}", path.display())))
    }
}

fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(items)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| CliError::Data(format!("serializing {}: {e}", path.display())))?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Looks up unit embeddings for every term; any absentee fails the run as a
/// data inconsistency listing the offending terms.
fn embeddings_for(
    store: &TermEmbeddingStore,
    terms: impl IntoIterator<Item = impl AsRef<str>>,
    what: &str,
) -> Result<Vec<Vec<f32>>> {
    let mut vectors = Vec::new();
    let mut missing = Vec::new();
    for term in terms {
        let term = term.as_ref();
        match store.get(term) {
            Some(v) => vectors.push(v.to_vec()),
            None => missing.push(term.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(vectors)
    } else {
        Err(CliError::Data(format!(
            "embedding store is missing {} {what} term(s): {}",
            missing.len(),
            missing.join(", ")
        )))
    }
}

/// Stacks term embeddings into an [M, dim] tensor for the model.
fn query_matrix(vectors: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let m = vectors.len();
    let dim = vectors.first().map_or(0, Vec::len);
    if m == 0 || dim == 0 {
        return Err(CliError::Data("query embedding matrix is empty".into()));
    }
    let mut data = Vec::with_capacity(m * dim);
    for v in vectors {
        data.extend_from_slice(v);
    }
    Ok(Tensor::from_vec(&[m, dim], data))
}

/// Loads and repairs every manifest record. Relative record paths resolve
/// against the data directory.
fn load_records(manifest: &DatasetManifest, data_dir: &Path) -> Result<Vec<EcgRecord>> {
    let mut records = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let raw = Path::new(&entry.path);
        let path = if raw.is_absolute() { raw.to_path_buf() } else { data_dir.join(raw) };
        let mut record = EcgRecord::load(&path, entry.record_id.clone())?;
        repair_nonfinite(&mut record)?;
        records.push(record);
    }
    Ok(records)
}

fn output_path(config: &RunConfig, out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| config.paths.output_dir.join(default_name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Extract clinical entities from free-text reports through the configured
/// client (recorded replay or live HTTP).
pub fn cmd_extract(config: &RunConfig, reports: &Path, out: Option<PathBuf>) -> Result<()> {
    preflight("reports", reports)?;
    let client: Box<dyn LlmClient> = match &config.llm.replay_path {
        Some(replay) => {
            preflight("llm.replay_path", replay)?;
            Box::new(ReplayClient::load(replay)?)
        }
        None => {
            let endpoint = config.llm.endpoint.as_deref().ok_or_else(|| {
                CliError::Config(
                    "llm.endpoint: required when llm.replay_path is unset".into(),
                )
            })?;
            Box::new(HttpLlmClient::new(endpoint, config.llm.model.clone())?)
        }
    };

    let raw: Vec<RawReport> = load_jsonl(reports)?;
    let total = raw.len();
    let kept = preprocess_reports(raw);
    if kept.len() < total {
        eprintln!("dropped {} report(s) shorter than three tokens", total - kept.len());
    }

    let batch = extract_batch(&kept, client.as_ref(), config.llm.max_concurrency)?;
    for skip in &batch.skipped {
        eprintln!("skipped {}: {}", skip.record_id, skip.reason);
    }

    let out = output_path(config, out, "extractions.jsonl");
    ensure_parent(&out)?;
    write_jsonl(&batch.results, &out)?;
    config.write_snapshot("extract")?;
    eprintln!(
        "extracted {} of {} report(s) ({} skipped) -> {}",
        batch.results.len(),
        kept.len(),
        batch.skipped.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Funnel {
    raw_unique: usize,
    post_filter: usize,
    clusters: usize,
    mapped: usize,
}

#[derive(Serialize)]
struct ClusterReportEntry {
    representative: String,
    members: Vec<MemberCount>,
    mapped_to: Option<MappedTerm>,
}

#[derive(Serialize)]
struct MemberCount {
    term: String,
    count: u64,
}

#[derive(Serialize)]
struct MappedTerm {
    index: usize,
    term: String,
    similarity: f64,
}

#[derive(Serialize)]
struct NormalizeReport {
    funnel: Funnel,
    clusters: Vec<ClusterReportEntry>,
    vocabulary_overlap: Vec<OverlapPair>,
}

/// Normalize extractions: uncertainty filter, dedup, vocabulary mapping,
/// label matrix, plus a cluster report with the count funnel.
pub fn cmd_normalize(config: &RunConfig, extractions: &Path, out: Option<PathBuf>) -> Result<()> {
    preflight("extractions", extractions)?;
    preflight("paths.vocab", &config.paths.vocab)?;
    preflight("paths.embeddings", &config.paths.embeddings)?;

    let results: Vec<ExtractionResult> = load_jsonl(extractions)?;
    let vocab = Vocabulary::load(&config.paths.vocab)?;
    let store = TermEmbeddingStore::load(&config.paths.embeddings)?;

    // Funnel stage 1: unique entities straight out of extraction.
    let mut raw_terms: Vec<&str> =
        results.iter().flat_map(|r| r.global.iter().map(String::as_str)).collect();
    raw_terms.sort_unstable();
    raw_terms.dedup();
    let raw_unique = raw_terms.len();

    // Stage 2: certain entities only.
    let entities = count_entities(&results);
    let post_filter = entities.len();

    let vectors = embeddings_for(&store, entities.iter().map(|(t, _)| t), "entity")?;
    let vocab_vectors = embeddings_for(&store, vocab.terms(), "vocabulary")?;

    // Stage 3: transitive near-duplicate merge.
    let clusters = dedup_entities(&entities, &vectors, config.thresholds.theta_dup)?;

    // Stage 4: vocabulary mapping.
    let mappings =
        map_cluster_to_vocabulary(&clusters, &vocab, &vocab_vectors, config.thresholds.theta_map)?;
    let mapped = mappings.iter().flatten().count();

    let labeled = label_records(&results, &clusters, &mappings)?;
    let matrix = build_label_matrix(&labeled, vocab.len())?;
    let labels_out = out.unwrap_or_else(|| config.paths.labels.clone());
    ensure_parent(&labels_out)?;
    matrix.save(&labels_out)?;

    // Diagnostic: which vocabulary terms are nearly covered by the cluster
    // representatives. Skipped when representatives collide after case
    // folding (cannot form a vocabulary).
    let overlap = {
        let reps: Vec<String> = clusters.iter().map(|c| c.representative.clone()).collect();
        let rep_vectors: Vec<Vec<f32>> =
            clusters.iter().map(|c| c.member_vectors[0].clone()).collect();
        Vocabulary::new(reps)
            .ok()
            .map(|rep_vocab| {
                overlap_analysis(
                    &rep_vocab,
                    &rep_vectors,
                    &vocab,
                    &vocab_vectors,
                    config.thresholds.theta_overlap,
                )
            })
            .transpose()?
            .unwrap_or_default()
    };

    let funnel = Funnel { raw_unique, post_filter, clusters: clusters.len(), mapped };
    let report = NormalizeReport {
        funnel,
        clusters: clusters
            .iter()
            .zip(&mappings)
            .map(|(c, mapping)| ClusterReportEntry {
                representative: c.representative.clone(),
                members: c
                    .members
                    .iter()
                    .map(|(term, count)| MemberCount { term: term.clone(), count: *count })
                    .collect(),
                mapped_to: mapping.map(|(index, similarity)| MappedTerm {
                    index,
                    term: vocab.term(index).to_string(),
                    similarity,
                }),
            })
            .collect(),
        vocabulary_overlap: overlap,
    };
    let report_path = config.paths.output_dir.join("normalize-report.json");
    std::fs::create_dir_all(&config.paths.output_dir)?;
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(&report_path, text)?;
    config.write_snapshot("normalize")?;

    eprintln!(
        "funnel: raw_unique={raw_unique} post_filter={post_filter} clusters={} mapped={mapped}",
        clusters.len()
    );
    eprintln!("labels -> {}", labels_out.display());
    eprintln!("report -> {}", report_path.display());
    Ok(())
}

/// Split the manifest into train/val/test manifests.
pub fn cmd_split(config: &RunConfig) -> Result<()> {
    preflight("paths.manifest", &config.paths.manifest)?;
    let manifest = DatasetManifest::load(&config.paths.manifest)?;
    let spec = config.split.to_spec(config.seed);
    let (train, val, test) = split_dataset(&manifest, &spec)?;
    std::fs::create_dir_all(&config.paths.output_dir)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        part.save(&config.paths.output_dir.join(format!("{name}.manifest.jsonl")))?;
    }
    config.write_snapshot("split")?;
    eprintln!(
        "split {} records into train={} val={} test={} -> {}",
        manifest.len(),
        train.len(),
        val.len(),
        test.len(),
        config.paths.output_dir.display()
    );
    Ok(())
}

/// Shared loader for the labeled-training commands: manifest, label matrix,
/// vocabulary, split datasets with repaired records.
struct TrainingData {
    vocab: Vocabulary,
    train_records: Vec<EcgRecord>,
    val_records: Vec<EcgRecord>,
    test_records: Vec<EcgRecord>,
    train_rows: Vec<Vec<usize>>,
    val_rows: Vec<Vec<usize>>,
    test_rows: Vec<Vec<usize>>,
}

fn load_training_data(config: &RunConfig) -> Result<TrainingData> {
    preflight("paths.manifest", &config.paths.manifest)?;
    preflight("paths.labels", &config.paths.labels)?;
    preflight("paths.vocab", &config.paths.vocab)?;

    let manifest = DatasetManifest::load(&config.paths.manifest)?;
    let matrix = LabelMatrix::load(&config.paths.labels)?;
    let vocab = Vocabulary::load(&config.paths.vocab)?;
    if matrix.m() != vocab.len() {
        return Err(CliError::Config(format!(
            "paths.labels: label matrix has m={} but the vocabulary has {} terms",
            matrix.m(),
            vocab.len()
        )));
    }

    let spec = config.split.to_spec(config.seed);
    let (train_m, val_m, test_m) = split_dataset(&manifest, &spec)?;
    let m = vocab.len();
    let train_rows = resolve_labels(&train_m, Some(&matrix), m)?;
    let val_rows = resolve_labels(&val_m, Some(&matrix), m)?;
    let test_rows = resolve_labels(&test_m, Some(&matrix), m)?;
    let train_records = load_records(&train_m, &config.paths.data_dir)?;
    let val_records = load_records(&val_m, &config.paths.data_dir)?;
    let test_records = load_records(&test_m, &config.paths.data_dir)?;
    Ok(TrainingData {
        vocab,
        train_records,
        val_records,
        test_records,
        train_rows,
        val_rows,
        test_rows,
    })
}

/// Pre-train the fusion model; writes a checkpoint and a per-epoch log.
pub fn cmd_pretrain(config: &RunConfig) -> Result<()> {
    preflight("paths.embeddings", &config.paths.embeddings)?;
    let data = load_training_data(config)?;
    let store = TermEmbeddingStore::load(&config.paths.embeddings)?;
    if store.dim() != config.model.embed_dim {
        return Err(CliError::Config(format!(
            "model.embed_dim is {} but the embedding store holds {}-dim vectors",
            config.model.embed_dim,
            store.dim()
        )));
    }
    let queries = query_matrix(&embeddings_for(&store, data.vocab.terms(), "vocabulary")?)?;

    let m = data.vocab.len();
    let train_ds = LabeledDataset::new(&data.train_records, &data.train_rows, m)?;
    let val_ds = LabeledDataset::new(&data.val_records, &data.val_rows, m)?;

    let mut model = SupremeModel::<f32>::new(config.model.clone(), config.seed)?;
    // The run seed drives the training streams; train.seed in the file is
    // superseded so one flag controls the whole run.
    let mut train_config = config.train.clone();
    train_config.seed = config.seed;
    let outcome = pretrain(&mut model, &train_ds, &val_ds, &queries, &train_config)?;

    std::fs::create_dir_all(&config.paths.checkpoint_dir)?;
    let checkpoint = config.paths.checkpoint_dir.join("model.spck");
    model.save_checkpoint(&checkpoint)?;
    std::fs::create_dir_all(&config.paths.output_dir)?;
    let log_path = config.paths.output_dir.join("train_log.jsonl");
    write_training_log(&outcome.log, &log_path)?;
    config.write_snapshot("pretrain")?;

    match outcome.best_val_auc {
        Some(auc) => eprintln!(
            "trained {} epoch(s); best val mean AUC {auc:.4} at epoch {}",
            outcome.epochs_run, outcome.best_epoch
        ),
        None => eprintln!(
            "trained {} epoch(s); validation never produced a scorable class",
            outcome.epochs_run
        ),
    }
    eprintln!("checkpoint -> {}", checkpoint.display());
    eprintln!("log -> {}", log_path.display());
    Ok(())
}

/// Zero-shot evaluate a checkpoint against a prompt list over the whole
/// manifest (an evaluation dataset is never split).
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    prompts: &Path,
    out: Option<PathBuf>,
) -> Result<()> {
    preflight("checkpoint", checkpoint)?;
    preflight("prompts", prompts)?;
    preflight("paths.manifest", &config.paths.manifest)?;
    preflight("paths.labels", &config.paths.labels)?;
    preflight("paths.embeddings", &config.paths.embeddings)?;

    let model = SupremeModel::<f32>::load_checkpoint(checkpoint)?;
    let prompt_vocab = Vocabulary::load(prompts)?;
    let store = TermEmbeddingStore::load(&config.paths.embeddings)?;
    if store.dim() != model.config().embed_dim {
        return Err(CliError::Config(format!(
            "checkpoint expects {}-dim query embeddings but the store holds {}",
            model.config().embed_dim,
            store.dim()
        )));
    }
    let queries = query_matrix(&embeddings_for(&store, prompt_vocab.terms(), "prompt")?)?;

    let manifest = DatasetManifest::load(&config.paths.manifest)?;
    let matrix = LabelMatrix::load(&config.paths.labels)?;
    let m = prompt_vocab.len();
    if matrix.m() != m {
        return Err(CliError::Config(format!(
            "paths.labels: label matrix has m={} but the prompt list has {m} queries",
            matrix.m()
        )));
    }
    let rows = resolve_labels(&manifest, Some(&matrix), m)?;
    let records = load_records(&manifest, &config.paths.data_dir)?;
    let ds = LabeledDataset::new(&records, &rows, m)?;

    let report = evaluate_zeroshot(
        &model,
        &ds,
        prompt_vocab.terms(),
        &queries,
        config.train.batch_size,
    )?;
    let out = output_path(config, out, "metrics.csv");
    ensure_parent(&out)?;
    emit_metrics(&report, &out)?;
    config.write_snapshot("eval")?;

    summarize_report(&report, &out);
    Ok(())
}

/// Linear-probe a checkpoint's frozen features on a labeled fraction.
pub fn cmd_probe(
    config: &RunConfig,
    checkpoint: &Path,
    fraction: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    preflight("checkpoint", checkpoint)?;
    let data = load_training_data(config)?;
    let model = SupremeModel::<f32>::load_checkpoint(checkpoint)?;

    let m = data.vocab.len();
    let train_ds = LabeledDataset::new(&data.train_records, &data.train_rows, m)?;
    let val_ds = LabeledDataset::new(&data.val_records, &data.val_rows, m)?;
    let test_ds = LabeledDataset::new(&data.test_records, &data.test_rows, m)?;

    let mut probe_config = config.probe.clone();
    probe_config.seed = config.seed;
    let outcome = linear_probe(
        &model,
        &train_ds,
        &val_ds,
        &test_ds,
        data.vocab.terms(),
        fraction,
        &probe_config,
    )?;

    let out = output_path(config, out, "probe-metrics.csv");
    ensure_parent(&out)?;
    emit_metrics(&outcome.report, &out)?;
    config.write_snapshot("probe")?;

    eprintln!(
        "probe trained on {} record(s) for {} epoch(s)",
        outcome.train_fraction_size, outcome.epochs_run
    );
    summarize_report(&outcome.report, &out);
    Ok(())
}

fn summarize_report(report: &EvalReport, out: &Path) {
    match report.mean_auc {
        Some(auc) => eprintln!(
            "mean AUC {auc:.4} over {} class(es), {} skipped",
            report.per_class.len() - report.skipped(),
            report.skipped()
        ),
        None => eprintln!("every class was degenerate; no AUC computed"),
    }
    eprintln!("metrics -> {}", out.display());
}
