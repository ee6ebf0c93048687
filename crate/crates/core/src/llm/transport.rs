//! Chat transports: live OpenAI-compatible HTTP, digest-keyed replay, and a
//! recording wrapper that writes replay files.
//!
//! # Request digest
//!
//! A replay key is the lowercase hex SHA-256 of the compact JSON object
//!
//! ```text
//! {"model":<string>,"temperature":<number>,"k":<integer>,"messages":[{"role":<string>,"content":<string>},...]}
//! ```
//!
//! with keys in exactly that order, no whitespace, and numbers in their
//! shortest round-trip form (`1.0` for a temperature of one). Any tool that
//! produces the same bytes can author portable recordings.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChatMessage, ChatTranscript, GenerationConfig, LlmError, Role};

/// Assistant reply stored for the demonstration round when a replay file has
/// no recording for it. Its content is discarded by the pipeline.
pub const DEMO_PLACEHOLDER: &str = "OK.";

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub k: usize,
    pub messages: &'a [ChatMessage],
}

impl<'a> ChatRequest<'a> {
    pub fn new(transcript: &'a ChatTranscript, cfg: &'a GenerationConfig) -> Self {
        ChatRequest {
            model: &cfg.model_name,
            temperature: cfg.temperature,
            k: cfg.k,
            messages: transcript.messages(),
        }
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    /// Network failures, timeouts, 408/429/5xx.
    #[error("retryable failure: {0}")]
    Retryable(String),
    #[error("request failed: {0}")]
    Fatal(String),
    #[error("content filtered: {0}")]
    ContentFiltered(String),
    #[error("no recording for digest {0}")]
    MissingRecording(String),
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;

    /// Reply to the demonstration round. The caller discards the content.
    fn acknowledge(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.complete(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (**self).complete(request)
    }

    fn acknowledge(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (**self).acknowledge(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for &T {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (**self).complete(request)
    }

    fn acknowledge(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (**self).acknowledge(request)
    }
}

/// Bounded exponential backoff for [`TransportError::Retryable`] failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(16),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }

    pub fn immediate(max_retries: usize) -> Self {
        RetryPolicy {
            max_retries,
            initial_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    pub fn delay_for(&self, retry: usize) -> Duration {
        let factor = self.multiplier.powi(retry as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }

    /// Runs `op`, retrying retryable failures. Returns the final error and the
    /// number of attempts made.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, (TransportError, usize)> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(TransportError::Retryable(_)) if attempt <= self.max_retries => {
                    let delay = self.delay_for(attempt - 1);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                Err(e) => return Err((e, attempt)),
            }
        }
    }
}

pub(crate) fn map_transport_error(err: TransportError, attempts: usize, doc_id: &str) -> LlmError {
    match err {
        TransportError::ContentFiltered(reason) => LlmError::ContentFiltered {
            doc_id: doc_id.to_string(),
            reason,
        },
        TransportError::MissingRecording(digest) => LlmError::MissingRecording { digest },
        TransportError::Retryable(message) | TransportError::Fatal(message) => {
            LlmError::Transport { attempts, message }
        }
    }
}

/// One round trip for a transcript ending in a user turn.
pub fn send_chat(
    transport: &dyn ChatTransport,
    transcript: &ChatTranscript,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<ChatMessage, LlmError> {
    send_chat_for(transport, transcript, cfg, retry, "")
}

pub(crate) fn send_chat_for(
    transport: &dyn ChatTransport,
    transcript: &ChatTranscript,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
    doc_id: &str,
) -> Result<ChatMessage, LlmError> {
    if transcript.last_role() != Some(Role::User) {
        return Err(LlmError::InvalidTranscript(
            "transcript must end with a user turn".into(),
        ));
    }
    let request = ChatRequest::new(transcript, cfg);
    retry
        .run(|| transport.complete(&request))
        .map(ChatMessage::assistant)
        .map_err(|(e, attempts)| map_transport_error(e, attempts, doc_id))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ReplayEntry {
    pub digest: String,
    pub reply: String,
}

/// In-memory digest → reply table; later entries win.
#[derive(Debug, Clone, Default)]
pub struct ReplayBook {
    replies: HashMap<String, String>,
}

impl ReplayBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let err = |message: String| LlmError::ReplayFile {
            path: path.display().to_string(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut book = ReplayBook::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry =
                serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            book.replies.insert(entry.digest, entry.reply);
        }
        Ok(book)
    }

    pub fn insert(&mut self, digest: impl Into<String>, reply: impl Into<String>) {
        self.replies.insert(digest.into(), reply.into());
    }

    pub fn get(&self, digest: &str) -> Option<&str> {
        self.replies.get(digest).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

/// Answers from recorded replies only; never touches the network.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    book: ReplayBook,
}

impl ReplayTransport {
    pub fn new(book: ReplayBook) -> Self {
        ReplayTransport { book }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(ReplayTransport::new(ReplayBook::load(path)?))
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let digest = request.digest();
        self.book
            .get(&digest)
            .map(str::to_string)
            .ok_or(TransportError::MissingRecording(digest))
    }

    fn acknowledge(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        Ok(self
            .book
            .get(&request.digest())
            .unwrap_or(DEMO_PLACEHOLDER)
            .to_string())
    }
}

/// Wraps a transport and appends every successful exchange to a replay file.
pub struct RecordingTransport<T> {
    inner: T,
    path: PathBuf,
    file: Mutex<fs::File>,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::ReplayFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(RecordingTransport {
            inner,
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn record(&self, request: &ChatRequest<'_>, reply: &str) -> Result<(), TransportError> {
        let entry = ReplayEntry {
            digest: request.digest(),
            reply: reply.to_string(),
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| TransportError::Fatal(format!("writing {}: {e}", self.path.display())))
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let reply = self.inner.complete(request)?;
        self.record(request, &reply)?;
        Ok(reply)
    }

    fn acknowledge(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let reply = self.inner.acknowledge(request)?;
        self.record(request, &reply)?;
        Ok(reply)
    }
}

/// Transport backed by a closure, for scripted fixtures and tests.
pub struct FnTransport<F>(pub F);

impl<F> ChatTransport for FnTransport<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

/// POSTs to an OpenAI-compatible `/chat/completions` endpoint.
pub struct LiveTransport {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        LiveTransport {
            url: url.into(),
            api_key,
            agent,
        }
    }

    /// Reads the bearer token from `env_var`; absent or empty means no auth header.
    pub fn from_env(url: impl Into<String>, env_var: &str) -> Self {
        let key = std::env::var(env_var).ok().filter(|k| !k.is_empty());
        LiveTransport::new(url, key)
    }
}

fn is_filter_marker(s: &str) -> bool {
    let s = s.to_ascii_lowercase();
    s.contains("content_filter") || s.contains("content_policy") || s.contains("responsibleai")
}

/// Maps a chat-completions response (status + JSON body) to a reply.
pub(crate) fn interpret_response(status: u16, body: &str) -> Result<String, TransportError> {
    let json: Option<Value> = serde_json::from_str(body).ok();
    if !(200..300).contains(&status) {
        let code = json
            .as_ref()
            .and_then(|j| j.pointer("/error/code"))
            .and_then(Value::as_str)
            .unwrap_or("");
        let message = json
            .as_ref()
            .and_then(|j| j.pointer("/error/message"))
            .and_then(Value::as_str)
            .unwrap_or(body);
        if is_filter_marker(code) || is_filter_marker(message) {
            return Err(TransportError::ContentFiltered(message.to_string()));
        }
        let msg = format!("HTTP {status}: {message}");
        return Err(match status {
            408 | 409 | 429 | 500..=599 => TransportError::Retryable(msg),
            _ => TransportError::Fatal(msg),
        });
    }
    let json = json.ok_or_else(|| TransportError::Fatal("response body is not JSON".into()))?;
    let choice = json
        .pointer("/choices/0")
        .ok_or_else(|| TransportError::Fatal("response has no choices".into()))?;
    if let Some(reason) = choice.get("finish_reason").and_then(Value::as_str) {
        if is_filter_marker(reason) {
            return Err(TransportError::ContentFiltered(format!("finish_reason {reason}")));
        }
    }
    if let Some(refusal) = choice.pointer("/message/refusal").and_then(Value::as_str) {
        return Err(TransportError::ContentFiltered(refusal.to_string()));
    }
    match choice.pointer("/message/content").and_then(Value::as_str) {
        Some(content) if !content.is_empty() => Ok(content.to_string()),
        _ => Err(TransportError::Fatal("response has no message content".into())),
    }
}

impl ChatTransport for LiveTransport {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = WireRequest {
            model: request.model,
            messages: request.messages,
            temperature: request.temperature,
        };
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        interpret_response(status, &text)
    }
}
