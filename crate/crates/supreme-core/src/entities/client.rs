//! Extraction-service clients: a chat-completion HTTP backend, a replay
//! backend for deterministic offline runs, and the bounded-concurrency batch
//! driver.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::extraction::{parse_extraction, user_prompt, ExtractionResult, SYSTEM_PROMPT};
use super::report::RawReport;
use super::{EntityError, Result};

/// A completion backend. `record_id` identifies the request for replay
/// lookups; live backends ignore it.
pub trait LlmClient: Sync {
    fn complete(&self, record_id: &str, system: &str, user: &str) -> Result<String>;
}

/// Chat-completion HTTP client. Sends
/// `{model, messages: [system, user], temperature: 0}` and reads
/// `choices[0].message.content`. Transient failures are retried with doubling
/// backoff; exhaustion is a client error. The bearer token comes exclusively
/// from the `SUPREME_LLM_TOKEN` environment variable.
pub struct HttpLlmClient {
    endpoint: String,
    model: String,
    token: Option<String>,
    retries: u32,
    base_backoff: Duration,
    http: reqwest::blocking::Client,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EntityError::Client(format!("building http client: {e}")))?;
        Ok(HttpLlmClient {
            endpoint: endpoint.into(),
            model: model.into(),
            token: std::env::var("SUPREME_LLM_TOKEN").ok(),
            retries: 3,
            base_backoff: Duration::from_millis(250),
            http,
        })
    }

    /// Shrink the retry backoff (tests) without changing the retry count.
    pub fn with_base_backoff(mut self, base: Duration) -> Self {
        self.base_backoff = base;
        self
    }

    fn attempt(&self, system: &str, user: &str) -> std::result::Result<String, String> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
        });
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let value: Value = resp.json().map_err(|e| format!("response body: {e}"))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response missing choices[0].message.content".to_string())
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, _record_id: &str, system: &str, user: &str) -> Result<String> {
        let mut backoff = self.base_backoff;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(system, user) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(EntityError::Client(format!(
            "request to {} failed after {} attempts: {last}",
            self.endpoint,
            self.retries + 1
        )))
    }
}

/// Offline backend that replays recorded responses keyed by record id, from a
/// JSONL file of `{"record_id": ..., "response": ...}` lines.
pub struct ReplayClient {
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut responses = HashMap::new();
        for (record_id, response) in entries {
            if responses.insert(record_id.clone(), response).is_some() {
                return Err(EntityError::Format(format!(
                    "duplicate replay fixture for record {record_id:?}"
                )));
            }
        }
        Ok(ReplayClient { responses })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line).map_err(|e| {
                EntityError::Format(format!("replay fixture line {}: {e}", lineno + 1))
            })?;
            let record_id = value
                .get("record_id")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    EntityError::Format(format!("replay fixture line {}: missing record_id", lineno + 1))
                })?
                .to_string();
            let response = value
                .get("response")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    EntityError::Format(format!("replay fixture line {}: missing response", lineno + 1))
                })?
                .to_string();
            entries.push((record_id, response));
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, record_id: &str, _system: &str, _user: &str) -> Result<String> {
        self.responses
            .get(record_id)
            .cloned()
            .ok_or_else(|| EntityError::Client(format!("no replay fixture for record {record_id:?}")))
    }
}

/// Extract entities from one report: send the fixed system message plus the
/// per-report user prompt, parse strictly, and on a schema failure re-ask
/// once before giving up.
pub fn extract_entities(report: &RawReport, client: &dyn LlmClient) -> Result<ExtractionResult> {
    let user = user_prompt(&report.text);
    let mut last_schema_error = None;
    for _ in 0..2 {
        let response = client.complete(&report.record_id, SYSTEM_PROMPT, &user)?;
        match parse_extraction(&report.record_id, &response) {
            Ok(result) => return Ok(result),
            Err(e @ EntityError::Schema { .. }) => last_schema_error = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(EntityError::Extraction {
        record_id: report.record_id.clone(),
        message: last_schema_error.expect("loop ran").to_string(),
    })
}

/// A report dropped from the batch because its response never parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedReport {
    pub record_id: String,
    pub reason: String,
}

/// Batch extraction outcome: parsed results plus the skipped reports, both in
/// input order.
#[derive(Debug)]
pub struct BatchExtraction {
    pub results: Vec<ExtractionResult>,
    pub skipped: Vec<SkippedReport>,
}

/// Run extraction over a batch with at most `concurrency` in-flight requests.
/// Results are emitted in input order. Unparseable reports are skipped and
/// reported; transport failures abort the batch.
pub fn extract_batch(
    reports: &[RawReport],
    client: &dyn LlmClient,
    concurrency: usize,
) -> Result<BatchExtraction> {
    if concurrency == 0 {
        return Err(EntityError::Config("concurrency must be at least 1".into()));
    }
    let workers = concurrency.min(reports.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<std::result::Result<ExtractionResult, SkippedReport>>>> =
        Mutex::new(vec![None; reports.len()]);
    let fatal: Mutex<Option<EntityError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reports.len() {
                    return;
                }
                let outcome = match extract_entities(&reports[i], client) {
                    Ok(result) => Ok(result),
                    Err(EntityError::Extraction { record_id, message }) => {
                        Err(SkippedReport { record_id, reason: message })
                    }
                    Err(fatal_err) => {
                        abort.store(true, Ordering::Relaxed);
                        let mut guard = fatal.lock().unwrap();
                        if guard.is_none() {
                            *guard = Some(fatal_err);
                        }
                        return;
                    }
                };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    if let Some(err) = fatal.into_inner().unwrap() {
        return Err(err);
    }
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for slot in slots.into_inner().unwrap() {
        match slot.expect("every index visited") {
            Ok(result) => results.push(result),
            Err(skip) => skipped.push(skip),
        }
    }
    Ok(BatchExtraction { results, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn valid_response(entity: &str) -> String {
        format!(
            r#"{{"global":["{entity}"],"classification":{{"normal":[],"abnormal":["{entity}"],"uncertain":[]}}}}"#
        )
    }

    /// Per-record scripted client: pops the next canned response on each call.
    struct ScriptedClient {
        script: Mutex<HashMap<String, Vec<String>>>,
    }

    impl ScriptedClient {
        fn new(entries: &[(&str, &[&str])]) -> Self {
            let script = entries
                .iter()
                .map(|(id, responses)| {
                    (id.to_string(), responses.iter().rev().map(|s| s.to_string()).collect())
                })
                .collect();
            ScriptedClient { script: Mutex::new(script) }
        }
    }

    impl LlmClient for ScriptedClient {
        fn complete(&self, record_id: &str, _system: &str, _user: &str) -> Result<String> {
            self.script
                .lock()
                .unwrap()
                .get_mut(record_id)
                .and_then(Vec::pop)
                .ok_or_else(|| EntityError::Client(format!("script exhausted for {record_id}")))
        }
    }

    #[test]
    fn replay_client_is_deterministic_and_keyed_by_record() {
        let client = ReplayClient::from_entries([
            ("a".to_string(), valid_response("pacs")),
            ("b".to_string(), valid_response("lvh")),
        ])
        .unwrap();
        let report = RawReport::new("a", "some report text here");
        let r1 = extract_entities(&report, &client).unwrap();
        let r2 = extract_entities(&report, &client).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.abnormal, ["pacs"]);
        let missing = RawReport::new("zzz", "three word text");
        assert!(matches!(extract_entities(&missing, &client), Err(EntityError::Client(_))));
    }

    #[test]
    fn replay_file_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let line = serde_json::json!({"record_id": "r1", "response": valid_response("pacs")});
        std::fs::write(&path, format!("{line}\n\n{line}\n")).unwrap();
        assert!(matches!(ReplayClient::load(&path), Err(EntityError::Format(_))));

        std::fs::write(&path, format!("{line}\n")).unwrap();
        let client = ReplayClient::load(&path).unwrap();
        assert_eq!(client.len(), 1);
    }

    #[test]
    fn one_reask_then_success() {
        let client =
            ScriptedClient::new(&[("r1", &["this is not json", &valid_response("pacs")] as &[&str])]);
        let r = extract_entities(&RawReport::new("r1", "text text text"), &client).unwrap();
        assert_eq!(r.abnormal, ["pacs"]);
    }

    #[test]
    fn two_bad_responses_skip_the_report() {
        let client = ScriptedClient::new(&[("r1", &["nope", "{\"global\":[]}"] as &[&str])]);
        let err = extract_entities(&RawReport::new("r1", "text text text"), &client).unwrap_err();
        assert!(matches!(err, EntityError::Extraction { .. }));
    }

    #[test]
    fn batch_preserves_order_and_collects_skips() {
        let reports: Vec<RawReport> =
            (0..10).map(|i| RawReport::new(format!("r{i}"), "three word text")).collect();
        let entries: Vec<(String, String)> = (0..10)
            .map(|i| {
                let response = if i == 4 {
                    "garbage".to_string()
                } else {
                    valid_response(&format!("entity {i}"))
                };
                (format!("r{i}"), response)
            })
            .collect();
        let client = ReplayClient::from_entries(entries).unwrap();
        let batch = extract_batch(&reports, &client, 3).unwrap();
        assert_eq!(batch.results.len(), 9);
        assert_eq!(batch.skipped.len(), 1);
        assert_eq!(batch.skipped[0].record_id, "r4");
        let ids: Vec<&str> = batch.results.iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids, ["r0", "r1", "r2", "r3", "r5", "r6", "r7", "r8", "r9"]);
        assert!(matches!(
            extract_batch(&reports, &client, 0),
            Err(EntityError::Config(_))
        ));
    }

    #[test]
    fn batch_aborts_on_transport_failure() {
        // Fixture covers only half the records; the gap is a client error.
        let reports: Vec<RawReport> =
            (0..6).map(|i| RawReport::new(format!("r{i}"), "three word text")).collect();
        let entries: Vec<(String, String)> =
            (0..3).map(|i| (format!("r{i}"), valid_response("x"))).collect();
        let client = ReplayClient::from_entries(entries).unwrap();
        assert!(matches!(extract_batch(&reports, &client, 2), Err(EntityError::Client(_))));
    }

    /// Minimal one-shot HTTP responder for exercising the live client.
    fn serve_once(listener: TcpListener, status_line: &'static str, body: String) {
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            // Read until the full request body arrived (Content-Length bytes
            // past the header terminator).
            loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if let Some(header_end) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if read >= header_end + 4 + content_length {
                        let request = text.into_owned();
                        let response = format!(
                            "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                            body.len()
                        );
                        stream.write_all(response.as_bytes()).unwrap();
                        return request;
                    }
                }
            }
        });
    }

    #[test]
    fn http_client_sends_chat_payload_and_reads_content() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let content = valid_response("pacs").replace('"', "\\\"");
        let body = format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]}}"#);
        serve_once(listener, "HTTP/1.1 200 OK", body);

        let client = HttpLlmClient::new(format!("http://{addr}/v1/chat/completions"), "test-model")
            .unwrap()
            .with_base_backoff(Duration::from_millis(1));
        let text = client.complete("r", "system text", "user text").unwrap();
        let parsed = parse_extraction("r", &text).unwrap();
        assert_eq!(parsed.abnormal, ["pacs"]);
    }

    #[test]
    fn http_client_retries_after_server_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let content = "{}";
        let ok_body = format!(r#"{{"choices":[{{"message":{{"content":"{content}"}}}}]}}"#);
        // First connection fails, second succeeds.
        let fail_listener = listener.try_clone().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = fail_listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let _ = stream.read(&mut buf);
            let _ = stream.write_all(b"HTTP/1.1 500 Internal Server Error\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
            serve_once(listener, "HTTP/1.1 200 OK", ok_body);
        });

        let client = HttpLlmClient::new(format!("http://{addr}/"), "m")
            .unwrap()
            .with_base_backoff(Duration::from_millis(1));
        assert_eq!(client.complete("r", "s", "u").unwrap(), "{}");
    }

    #[test]
    fn http_client_fails_after_retry_budget() {
        // Nothing listening: connection refused on every attempt.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let client = HttpLlmClient::new(format!("http://{addr}/"), "m")
            .unwrap()
            .with_base_backoff(Duration::from_millis(1));
        assert!(matches!(client.complete("r", "s", "u"), Err(EntityError::Client(_))));
    }
}
