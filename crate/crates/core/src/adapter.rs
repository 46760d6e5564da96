//! Client for an external model adapter that supplies neural entity,
//! nominal and sentiment annotations.
//!
//! Requests and responses are single-line JSON objects. The default
//! transport runs the adapter as a child process and talks over its
//! stdin/stdout; an HTTP transport POSTs the same objects to
//! `<base>/v1/extract`. Every call has a timeout (30 s by default).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{EntitySpan, MentionExtractor, Mentions, RuleExtractor};
use crate::sentiment::{LexiconClassifier, SentimentClassifier, SentimentLabel};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Environment variable naming the adapter's HTTP base URL.
pub const ADAPTER_URL_ENV: &str = "ADAPTER_URL";
pub const EXTRACT_PATH: &str = "/v1/extract";
const DEFAULT_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterOp {
    Ner,
    Nominal,
    Sentiment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub op: AdapterOp,
    pub texts: Vec<String>,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// One entry per input text, shaped by the request's op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdapterResults {
    Ner(Vec<Vec<NerSpan>>),
    Labels(Vec<SentimentLabel>),
    Tokens(Vec<Vec<String>>),
}

impl AdapterResults {
    pub fn len(&self) -> usize {
        match self {
            AdapterResults::Ner(v) => v.len(),
            AdapterResults::Labels(v) => v.len(),
            AdapterResults::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<AdapterResults>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AdapterResponse {
    pub fn failure(request_id: impl Into<String>, message: impl Into<String>) -> Self {
        AdapterResponse {
            request_id: request_id.into(),
            results: None,
            error: Some(message.into()),
        }
    }
}

pub trait Transport: Send + Sync {
    fn describe(&self) -> String;
    fn round_trip(&self, request: &AdapterRequest) -> Result<AdapterResponse>;
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Adapter as a child process speaking line-delimited JSON.
pub struct StdioTransport {
    command: String,
    timeout: Duration,
    io: Mutex<ChildIo>,
}

impl StdioTransport {
    /// `command` is run through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {command}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start adapter `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(StdioTransport {
            command: command.to_string(),
            timeout,
            io: Mutex::new(ChildIo {
                child,
                stdin,
                lines: rx,
            }),
        })
    }
}

impl Transport for StdioTransport {
    fn describe(&self) -> String {
        format!("stdio:{}", self.command)
    }

    fn round_trip(&self, request: &AdapterRequest) -> Result<AdapterResponse> {
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::Backend("adapter lock poisoned".into()))?;
        let line = serde_json::to_string(request).expect("request serializes");
        writeln!(io.stdin, "{line}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| Error::Backend(format!("adapter write failed: {e}")))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match io.lines.recv_timeout(left) {
                Ok(Ok(line)) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let resp: AdapterResponse = serde_json::from_str(&line)
                        .map_err(|e| Error::Backend(format!("unparseable adapter response: {e}")))?;
                    // Late answers to requests that already timed out.
                    if resp.request_id != request.request_id {
                        continue;
                    }
                    return Ok(resp);
                }
                Ok(Err(e)) => return Err(Error::Backend(format!("adapter read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Backend(format!(
                        "adapter did not answer within {:?}",
                        self.timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Backend("adapter closed its output".into())),
            }
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// POSTs each request to `<base>/v1/extract`.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with(EXTRACT_PATH) {
            base.to_string()
        } else {
            format!("{base}{EXTRACT_PATH}")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { url, agent }
    }
}

impl Transport for HttpTransport {
    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }

    fn round_trip(&self, request: &AdapterRequest) -> Result<AdapterResponse> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| Error::Backend(format!("adapter request to {} failed: {e}", self.url)))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Backend(format!("adapter response unreadable: {e}")))?;
        match serde_json::from_str::<AdapterResponse>(&text) {
            Ok(r) => Ok(r),
            Err(e) if status.is_success() => Err(Error::Backend(format!("unparseable adapter response: {e}"))),
            Err(_) => Err(Error::Backend(format!("adapter answered HTTP {status}"))),
        }
    }
}

/// Engine-side adapter client; usable as both a sentiment classifier and a
/// mention extractor.
pub struct AdapterClient {
    transport: Box<dyn Transport>,
    batch_size: usize,
    next_id: AtomicU64,
}

impl AdapterClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        AdapterClient {
            transport,
            batch_size: DEFAULT_BATCH,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        Ok(Self::new(Box::new(StdioTransport::spawn(command, timeout)?)))
    }

    pub fn http(base_url: &str, timeout: Duration) -> Self {
        Self::new(Box::new(HttpTransport::new(base_url, timeout)))
    }

    /// `--adapter-cmd` wins over `ADAPTER_URL`; `None` when neither is set.
    pub fn from_settings(command: Option<&str>, timeout: Duration) -> Result<Option<Self>> {
        if let Some(cmd) = command {
            return Self::spawn(cmd, timeout).map(Some);
        }
        match std::env::var(ADAPTER_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Some(Self::http(url.trim(), timeout))),
            _ => Ok(None),
        }
    }

    /// Sends one request per chunk and checks each answer's shape.
    pub fn call(&self, op: AdapterOp, texts: &[&str]) -> Result<Vec<AdapterResults>> {
        let mut out = Vec::new();
        for chunk in texts.chunks(self.batch_size) {
            let request = AdapterRequest {
                op,
                texts: chunk.iter().map(|t| t.to_string()).collect(),
                request_id: format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed)),
            };
            let resp = self.transport.round_trip(&request)?;
            if resp.request_id != request.request_id {
                return Err(Error::Backend(format!(
                    "adapter answered {} to request {}",
                    resp.request_id, request.request_id
                )));
            }
            if let Some(err) = resp.error {
                return Err(Error::Backend(format!("adapter error: {err}")));
            }
            let results = resp
                .results
                .ok_or_else(|| Error::Backend("adapter response has no results".into()))?;
            check_results(op, chunk, &results)?;
            out.push(results);
        }
        Ok(out)
    }
}

fn check_results(op: AdapterOp, texts: &[&str], results: &AdapterResults) -> Result<()> {
    if results.len() != texts.len() {
        return Err(Error::Backend(format!(
            "adapter returned {} results for {} texts",
            results.len(),
            texts.len()
        )));
    }
    // An empty batch of any op deserializes as the first untagged variant.
    let shape_ok = results.is_empty()
        || matches!(
            (op, results),
            (AdapterOp::Ner, AdapterResults::Ner(_))
                | (AdapterOp::Sentiment, AdapterResults::Labels(_))
                | (AdapterOp::Nominal, AdapterResults::Tokens(_))
        )
        // `[[], []]` parses as entity lists even for nominal requests.
        || (op == AdapterOp::Nominal && matches!(results, AdapterResults::Ner(v) if v.iter().all(Vec::is_empty)));
    if !shape_ok {
        return Err(Error::Backend(format!("adapter results do not match op {op:?}")));
    }
    if let AdapterResults::Ner(spans) = results {
        for (text, spans) in texts.iter().zip(spans) {
            let len = text.chars().count();
            if let Some(s) = spans.iter().find(|s| s.start >= s.end || s.end > len) {
                return Err(Error::Backend(format!(
                    "entity span {}..{} outside a {len}-char text",
                    s.start, s.end
                )));
            }
        }
    }
    Ok(())
}

fn flatten_tokens(batches: Vec<AdapterResults>) -> Vec<Vec<String>> {
    batches
        .into_iter()
        .flat_map(|b| match b {
            AdapterResults::Tokens(t) => t,
            other => vec![Vec::new(); other.len()],
        })
        .collect()
}

impl SentimentClassifier for AdapterClient {
    fn name(&self) -> &str {
        "adapter"
    }

    fn classify_batch(&self, texts: &[&str]) -> Result<Vec<SentimentLabel>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .call(AdapterOp::Sentiment, texts)?
            .into_iter()
            .flat_map(|b| match b {
                AdapterResults::Labels(l) => l,
                _ => Vec::new(),
            })
            .collect())
    }
}

impl MentionExtractor for AdapterClient {
    fn name(&self) -> &str {
        "adapter"
    }

    fn extract_batch(&self, texts: &[&str]) -> Result<Vec<Mentions>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let spans: Vec<Vec<NerSpan>> = self
            .call(AdapterOp::Ner, texts)?
            .into_iter()
            .flat_map(|b| match b {
                AdapterResults::Ner(s) => s,
                other => vec![Vec::new(); other.len()],
            })
            .collect();
        let nominals = flatten_tokens(self.call(AdapterOp::Nominal, texts)?);
        Ok(texts
            .iter()
            .zip(spans)
            .zip(nominals)
            .map(|((text, spans), nominals)| {
                let chars: Vec<char> = text.chars().collect();
                Mentions {
                    entities: spans
                        .into_iter()
                        .map(|s| EntitySpan {
                            text: chars[s.start..s.end].iter().collect(),
                            label: s.label,
                            start: s.start,
                            end: s.end,
                        })
                        .collect(),
                    nominals,
                }
            })
            .collect())
    }
}

/// Answers requests with the built-in lexicon classifier and rule
/// extractor. Backs the stub adapter used in tests and demos.
#[derive(Debug, Clone, Default)]
pub struct BuiltinResponder {
    sentiment: LexiconClassifier,
    rules: RuleExtractor,
}

impl BuiltinResponder {
    pub fn answer(&self, request: &AdapterRequest) -> AdapterResponse {
        if request.texts.is_empty() {
            return AdapterResponse::failure(&request.request_id, "texts must be nonempty");
        }
        let results = match request.op {
            AdapterOp::Sentiment => {
                AdapterResults::Labels(request.texts.iter().map(|t| self.sentiment.label(t)).collect())
            }
            AdapterOp::Nominal => {
                AdapterResults::Tokens(request.texts.iter().map(|t| self.rules.extract_nominals(t)).collect())
            }
            AdapterOp::Ner => AdapterResults::Ner(
                request
                    .texts
                    .iter()
                    .map(|t| {
                        self.rules
                            .extract_entities(t)
                            .into_iter()
                            .map(|e| NerSpan {
                                start: e.start,
                                end: e.end,
                                label: e.label,
                            })
                            .collect()
                    })
                    .collect(),
            ),
        };
        AdapterResponse {
            request_id: request.request_id.clone(),
            results: Some(results),
            error: None,
        }
    }

    /// Handles one raw protocol line, including malformed input.
    pub fn answer_line(&self, line: &str) -> String {
        let resp = match serde_json::from_str::<AdapterRequest>(line) {
            Ok(req) => self.answer(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(|x| x.as_str()).map(String::from))
                    .unwrap_or_default();
                AdapterResponse::failure(id, format!("malformed request: {e}"))
            }
        };
        serde_json::to_string(&resp).expect("response serializes")
    }
}
