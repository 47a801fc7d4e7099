//! End-to-end tests of the `supreme` binary: exit codes, output layout, and
//! byte-level determinism across repeated runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supreme_core::embed::TermEmbeddingStore;
use supreme_core::entities::{build_label_matrix, ExtractionResult};
use supreme_core::signal::{DatasetManifest, EcgRecord, ManifestEntry};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supreme"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Axis-aligned unit vector.
fn axis(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

#[test]
fn split_produces_ratio_counts_and_reruns_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::new(
        (0..100)
            .map(|i| ManifestEntry {
                record_id: format!("r{i:03}"),
                path: format!("r{i:03}.ecg"),
                labels: vec![],
            })
            .collect(),
    )
    .unwrap();
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    manifest.save(&dir.path().join("data/manifest.jsonl")).unwrap();

    let output = run_in(dir.path(), &["split", "--seed", "3"]);
    assert_exit(&output, 0);

    let mut firsts = Vec::new();
    for (name, expected) in [("train", 70), ("val", 10), ("test", 20)] {
        let path = dir.path().join(format!("out/{name}.manifest.jsonl"));
        let bytes = read(&path);
        let lines = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
        assert_eq!(lines, expected, "{name} manifest row count");
        firsts.push(bytes);
    }
    assert!(dir.path().join("out/split.config.json").exists());

    let rerun = run_in(dir.path(), &["split", "--seed", "3"]);
    assert_exit(&rerun, 0);
    for (name, first) in ["train", "val", "test"].iter().zip(&firsts) {
        let path = dir.path().join(format!("out/{name}.manifest.jsonl"));
        assert_eq!(&read(&path), first, "{name} manifest changed across reruns");
    }

    // A seed change reshuffles membership but keeps the counts.
    let reseeded = run_in(dir.path(), &["split", "--seed", "4"]);
    assert_exit(&reseeded, 0);
    let train = read(&dir.path().join("out/train.manifest.jsonl"));
    assert_ne!(train, firsts[0], "different seed must shuffle differently");
}

#[test]
fn split_with_degenerate_ratio_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::new(
        (0..3)
            .map(|i| ManifestEntry {
                record_id: format!("r{i}"),
                path: format!("r{i}.ecg"),
                labels: vec![],
            })
            .collect(),
    )
    .unwrap();
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    manifest.save(&dir.path().join("data/manifest.jsonl")).unwrap();

    // 3 records at 1% validation ratio rounds to zero rows.
    let output = run_in(
        dir.path(),
        &[
            "split",
            "--set",
            "split.train=0.99",
            "--set",
            "split.val=0.01",
            "--set",
            "split.test=0.0",
        ],
    );
    assert_exit(&output, 1);
}

fn write_reports(dir: &Path) -> PathBuf {
    let path = dir.join("reports.jsonl");
    let lines = [
        r#"{"record_id": "r1", "text": "sinus rhythm. normal ecg."}"#,
        r#"{"record_id": "r2", "text": "afib"}"#,
        r#"{"record_id": "r3", "text": "atrial fibrillation with st depression noted"}"#,
        r#"{"record_id": "r4", "text": "possible inferior infarct, unconfirmed"}"#,
    ];
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn write_replay(dir: &Path) -> PathBuf {
    let path = dir.join("replay.jsonl");
    let ok1 = serde_json::json!({
        "record_id": "r1",
        "response": "{\"global\": [\"sinus rhythm\", \"normal ecg\"], \"classification\": {\"normal\": [\"sinus rhythm\", \"normal ecg\"], \"abnormal\": [], \"uncertain\": []}}",
    });
    let ok3 = serde_json::json!({
        "record_id": "r3",
        "response": "{\"global\": [\"atrial fibrillation\", \"st depression\"], \"classification\": {\"normal\": [], \"abnormal\": [\"atrial fibrillation\", \"st depression\"], \"uncertain\": []}}",
    });
    let bad4 = serde_json::json!({
        "record_id": "r4",
        "response": "not valid json at all",
    });
    let lines = [ok1.to_string(), ok3.to_string(), bad4.to_string()];
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn extract_replays_fixtures_and_skips_unparseable() {
    let dir = tempfile::tempdir().unwrap();
    let reports = write_reports(dir.path());
    let replay = write_replay(dir.path());

    let args = [
        "extract",
        reports.to_str().unwrap(),
        "--set",
        &format!("llm.replay_path={}", replay.display()),
    ];
    let output = run_in(dir.path(), &args);
    assert_exit(&output, 0);
    // r2 is dropped by preprocessing (one token); r4 is skipped (bad JSON).
    let err = stderr(&output);
    assert!(err.contains("dropped 1"), "{err}");
    assert!(err.contains("skipped r4"), "{err}");

    let out_path = dir.path().join("out/extractions.jsonl");
    let first = read(&out_path);
    let text = String::from_utf8(first.clone()).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<ExtractionResult>(l).unwrap().record_id)
        .collect();
    assert_eq!(ids, ["r1", "r3"], "results in input order");

    let rerun = run_in(dir.path(), &args);
    assert_exit(&rerun, 0);
    assert_eq!(read(&out_path), first, "extraction output changed across reruns");
}

#[test]
fn extract_without_endpoint_or_replay_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let reports = write_reports(dir.path());
    let output = run_in(dir.path(), &["extract", reports.to_str().unwrap()]);
    assert_exit(&output, 1);
    assert!(stderr(&output).contains("llm.endpoint"));
}

#[test]
fn extract_against_unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let reports = write_reports(dir.path());
    // Reserved port 1 refuses connections immediately.
    let output = run_in(
        dir.path(),
        &[
            "extract",
            reports.to_str().unwrap(),
            "--set",
            "llm.endpoint=http://127.0.0.1:1/v1/chat/completions",
        ],
    );
    assert_exit(&output, 2);
}

#[test]
fn extract_missing_reports_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["extract", "absent.jsonl", "--set", "llm.endpoint=http://x"]);
    assert_exit(&output, 1);
    assert!(stderr(&output).contains("absent.jsonl"));
}

/// Extractions fixture: three records over three distinct entities, where
/// "afib" and "atrial fibrillation" share an embedding axis (so they merge)
/// and both vocabulary terms match an entity exactly.
fn write_normalize_fixtures(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir.join("data")).unwrap();
    let extractions = dir.join("extractions.jsonl");
    let rows = [
        serde_json::json!({
            "record_id": "r1",
            "global": ["afib", "sinus rhythm", "possible lvh"],
            "normal": ["sinus rhythm"],
            "abnormal": ["afib"],
            "uncertain": ["possible lvh"],
        }),
        serde_json::json!({
            "record_id": "r2",
            "global": ["atrial fibrillation"],
            "normal": [],
            "abnormal": ["atrial fibrillation"],
            "uncertain": [],
        }),
        serde_json::json!({
            "record_id": "r3",
            "global": ["sinus rhythm"],
            "normal": ["sinus rhythm"],
            "abnormal": [],
            "uncertain": [],
        }),
    ];
    let text: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
    std::fs::write(&extractions, text.join("\n") + "\n").unwrap();

    std::fs::write(dir.join("data/vocabulary.txt"), "atrial fibrillation\nsinus rhythm\n")
        .unwrap();

    let mut store = TermEmbeddingStore::new(4).unwrap();
    store.insert("afib", axis(4, 0)).unwrap();
    store.insert("atrial fibrillation", axis(4, 0)).unwrap();
    store.insert("sinus rhythm", axis(4, 1)).unwrap();
    store.insert("possible lvh", axis(4, 2)).unwrap();
    store.save(&dir.join("data/embeddings.spem")).unwrap();
    extractions
}

#[test]
fn normalize_builds_labels_report_and_funnel() {
    let dir = tempfile::tempdir().unwrap();
    let extractions = write_normalize_fixtures(dir.path());

    let output = run_in(dir.path(), &["normalize", extractions.to_str().unwrap()]);
    assert_exit(&output, 0);
    let err = stderr(&output);
    assert!(
        err.contains("raw_unique=4 post_filter=3 clusters=2 mapped=2"),
        "funnel missing or wrong: {err}"
    );

    let labels = read(&dir.path().join("out/labels.jsonl"));
    let labels_text = String::from_utf8(labels.clone()).unwrap();
    let mut lines = labels_text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["n"], 3);
    assert_eq!(header["m"], 2);
    let rows: Vec<serde_json::Value> =
        lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["record_id"], "r1");
    // r1: afib -> atrial fibrillation (0) + sinus rhythm (1); uncertain
    // "possible lvh" must not contribute.
    assert_eq!(rows[0]["positives"], serde_json::json!([0, 1]));
    assert_eq!(rows[1]["positives"], serde_json::json!([0]));
    assert_eq!(rows[2]["positives"], serde_json::json!([1]));

    let report: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("out/normalize-report.json"))).unwrap();
    assert_eq!(report["funnel"]["raw_unique"], 4);
    assert_eq!(report["funnel"]["post_filter"], 3);
    assert_eq!(report["funnel"]["clusters"], 2);
    assert_eq!(report["funnel"]["mapped"], 2);
    let clusters = report["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 2);
    // Identical embeddings merge; both members appear under one cluster.
    let afib = clusters
        .iter()
        .find(|c| c["mapped_to"]["term"] == "atrial fibrillation")
        .expect("afib cluster mapped");
    assert_eq!(afib["members"].as_array().unwrap().len(), 2);

    let rerun = run_in(dir.path(), &["normalize", extractions.to_str().unwrap()]);
    assert_exit(&rerun, 0);
    assert_eq!(read(&dir.path().join("out/labels.jsonl")), labels);
}

#[test]
fn normalize_missing_embedding_exits_3_listing_terms() {
    let dir = tempfile::tempdir().unwrap();
    let extractions = write_normalize_fixtures(dir.path());
    // Rebuild the store without one entity's vector.
    let mut store = TermEmbeddingStore::new(4).unwrap();
    store.insert("afib", axis(4, 0)).unwrap();
    store.insert("atrial fibrillation", axis(4, 0)).unwrap();
    store.save(&dir.path().join("data/embeddings.spem")).unwrap();

    let output = run_in(dir.path(), &["normalize", extractions.to_str().unwrap()]);
    assert_exit(&output, 3);
    assert!(stderr(&output).contains("sinus rhythm"), "{}", stderr(&output));
}

/// Builds a complete miniature training workspace: 12 two-lead records of
/// 40 samples in two waveform families, labels against a two-term
/// vocabulary, and axis-aligned query embeddings of width 8.
fn write_training_workspace(dir: &Path) {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();

    let mut entries = Vec::new();
    let mut labeled = Vec::new();
    for i in 0..12 {
        let fast = i % 2 == 0;
        let signal: Vec<f32> = (0..80)
            .map(|t| {
                let phase = t as f32 + i as f32 * 0.37;
                if fast {
                    (phase * 0.9).sin()
                } else {
                    (phase * 0.12).sin()
                }
            })
            .collect();
        let id = format!("r{i:02}");
        let record = EcgRecord::new(id.clone(), 2, 40, 100, signal).unwrap();
        record.save(&data.join(format!("{id}.ecg"))).unwrap();
        entries.push(ManifestEntry {
            record_id: id.clone(),
            path: format!("{id}.ecg"),
            labels: vec![],
        });
        labeled.push((id, if fast { vec![0] } else { vec![1] }));
    }
    DatasetManifest::new(entries).unwrap().save(&data.join("manifest.jsonl")).unwrap();

    std::fs::create_dir_all(dir.join("out")).unwrap();
    build_label_matrix(&labeled, 2).unwrap().save(&dir.join("out/labels.jsonl")).unwrap();

    std::fs::write(data.join("vocabulary.txt"), "fast rhythm\nslow rhythm\n").unwrap();
    let mut store = TermEmbeddingStore::new(8).unwrap();
    store.insert("fast rhythm", axis(8, 0)).unwrap();
    store.insert("slow rhythm", axis(8, 1)).unwrap();
    store.save(&data.join("embeddings.spem")).unwrap();
}

fn tiny_model_args() -> Vec<String> {
    [
        "model.leads=2",
        "model.samples=40",
        "model.patch_len=10",
        "model.vit_width=8",
        "model.vit_depth=1",
        "model.vit_heads=2",
        "model.hidden=16",
        "model.latent=8",
        "model.cfn_depth=1",
        "model.cfn_heads=2",
        "model.embed_dim=8",
        "train.max_epochs=2",
        "train.batch_size=4",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect()
}

#[test]
fn pretrain_eval_probe_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_training_workspace(dir.path());

    let mut pretrain_args: Vec<String> = vec!["pretrain".into(), "--seed".into(), "11".into()];
    pretrain_args.extend(tiny_model_args());
    let args: Vec<&str> = pretrain_args.iter().map(String::as_str).collect();
    let output = run_in(dir.path(), &args);
    assert_exit(&output, 0);

    let checkpoint = dir.path().join("out/checkpoints/model.spck");
    let log_path = dir.path().join("out/train_log.jsonl");
    assert!(checkpoint.exists());
    assert!(dir.path().join("out/pretrain.config.json").exists());
    let first_ckpt = read(&checkpoint);
    let first_log = read(&log_path);
    let log_text = String::from_utf8(first_log.clone()).unwrap();
    assert_eq!(log_text.lines().count(), 2, "one log line per epoch: {log_text}");
    for line in log_text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "train_loss", "val_mean_auc", "lr"] {
            assert!(v.get(key).is_some(), "log line missing {key}: {line}");
        }
    }

    // Identical rerun reproduces the checkpoint byte for byte.
    let rerun = run_in(dir.path(), &args);
    assert_exit(&rerun, 0);
    assert_eq!(read(&checkpoint), first_ckpt, "checkpoint differs across reruns");
    assert_eq!(read(&log_path), first_log, "training log differs across reruns");

    // Zero-shot evaluation with the vocabulary as the prompt list.
    let mut eval_args: Vec<String> = vec![
        "eval".into(),
        checkpoint.to_str().unwrap().into(),
        "data/vocabulary.txt".into(),
        "--seed".into(),
        "11".into(),
    ];
    eval_args.extend(tiny_model_args());
    let args: Vec<&str> = eval_args.iter().map(String::as_str).collect();
    let output = run_in(dir.path(), &args);
    assert_exit(&output, 0);
    let metrics_path = dir.path().join("out/metrics.csv");
    let metrics = read(&metrics_path);
    let text = String::from_utf8(metrics.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "query,auc,positives,skipped");
    assert_eq!(lines.len(), 4, "header + 2 classes + mean: {text}");
    assert!(lines[1].starts_with("fast rhythm,"));
    assert!(lines[2].starts_with("slow rhythm,"));
    assert!(lines[3].starts_with("mean,"));

    let rerun = run_in(dir.path(), &args);
    assert_exit(&rerun, 0);
    assert_eq!(read(&metrics_path), metrics, "metrics differ across reruns");

    // Linear probe on the frozen checkpoint.
    let mut probe_args: Vec<String> = vec![
        "probe".into(),
        checkpoint.to_str().unwrap().into(),
        "--fraction".into(),
        "1.0".into(),
        "--seed".into(),
        "11".into(),
    ];
    probe_args.extend(tiny_model_args());
    probe_args.extend(["--set".into(), "probe.max_epochs=3".into()]);
    let args: Vec<&str> = probe_args.iter().map(String::as_str).collect();
    let output = run_in(dir.path(), &args);
    assert_exit(&output, 0);
    let probe_metrics = read(&dir.path().join("out/probe-metrics.csv"));
    let probe_text = String::from_utf8(probe_metrics).unwrap();
    assert!(probe_text.starts_with("query,auc,positives,skipped\n"), "{probe_text}");
}

#[test]
fn eval_with_mismatched_prompt_count_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write_training_workspace(dir.path());

    let mut pretrain_args: Vec<String> = vec!["pretrain".into(), "--seed".into(), "1".into()];
    pretrain_args.extend(tiny_model_args());
    pretrain_args.extend(["--set".into(), "train.max_epochs=1".into()]);
    let args: Vec<&str> = pretrain_args.iter().map(String::as_str).collect();
    assert_exit(&run_in(dir.path(), &args), 0);

    // Three prompts against a two-class label matrix.
    std::fs::write(dir.path().join("prompts.txt"), "a\nb\nc\n").unwrap();
    let mut store = TermEmbeddingStore::new(8).unwrap();
    for (i, t) in ["a", "b", "c"].iter().enumerate() {
        store.insert(t, axis(8, i)).unwrap();
    }
    store.save(&dir.path().join("data/embeddings.spem")).unwrap();

    let mut eval_args: Vec<String> = vec![
        "eval".into(),
        "out/checkpoints/model.spck".into(),
        "prompts.txt".into(),
    ];
    eval_args.extend(tiny_model_args());
    let args: Vec<&str> = eval_args.iter().map(String::as_str).collect();
    let output = run_in(dir.path(), &args);
    assert_exit(&output, 1);
    assert!(stderr(&output).contains("prompt list"), "{}", stderr(&output));
}

#[test]
fn unknown_flag_and_bad_subcommand_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(&run_in(dir.path(), &["frobnicate"]), 1);
    assert_exit(&run_in(dir.path(), &["split", "--bogus"]), 1);
    // Help and version are success paths.
    assert_exit(&run_in(dir.path(), &["--help"]), 0);
    assert_exit(&run_in(dir.path(), &["--version"]), 0);
}
