//! Chat-completion backends: an OpenAI-compatible HTTP client and a
//! transcript-driven mock for offline runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{RateLimiter, RetryPolicy};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("no transcript entry for request {0}")]
    MissingTranscript(String),
    #[error("cannot load transcript {path}: {message}")]
    Transcript { path: String, message: String },
}

impl BackendError {
    /// Transport failures, rate limiting (429) and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Hex SHA-256 of the exact request content.
pub fn content_hash(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Sends `prompt` as a single user message and returns the first choice.
    fn complete(&self, prompt: &str, params: GenerationParams) -> Result<String, BackendError>;

    /// Model or backend name recorded alongside outputs.
    fn id(&self) -> &str;

    /// Endpoint description for the run manifest.
    fn describe(&self) -> String {
        self.id().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
}

pub struct HttpChatBackend {
    endpoint: EndpointConfig,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    limiter: RateLimiter,
}

impl HttpChatBackend {
    pub fn new(endpoint: EndpointConfig, retry: RetryPolicy, limiter: RateLimiter) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpChatBackend {
            endpoint,
            client,
            retry,
            limiter,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        self.limiter.acquire();
        let mut req = self.client.post(self.url()).json(body);
        if !self.endpoint.api_key.is_empty() {
            req = req.bearer_auth(&self.endpoint.api_key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        parse_chat_response(&text)
    }
}

/// Builds the request body for the chat endpoint.
pub fn chat_request_body(model: &str, prompt: &str, params: GenerationParams) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    })
}

/// Extracts `choices[0].message.content`.
pub fn parse_chat_response(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str, params: GenerationParams) -> Result<String, BackendError> {
        let body = chat_request_body(&self.endpoint.model, prompt, params);
        self.retry.run(|| self.send_once(&body))
    }

    fn id(&self) -> &str {
        &self.endpoint.model
    }

    fn describe(&self) -> String {
        format!("{} @ {}", self.endpoint.model, self.endpoint.base_url)
    }
}

/// Replays canned responses keyed by the content hash of each prompt.
#[derive(Debug, Default)]
pub struct MockChatBackend {
    name: String,
    transcript: BTreeMap<String, String>,
    calls: AtomicUsize,
}

impl MockChatBackend {
    pub fn new(name: &str, transcript: BTreeMap<String, String>) -> Self {
        MockChatBackend {
            name: name.to_string(),
            transcript,
            calls: AtomicUsize::new(0),
        }
    }

    /// Loads a JSON object mapping request hash to response text.
    pub fn from_file(name: &str, path: &Path) -> Result<Self, BackendError> {
        let err = |message: String| BackendError::Transcript {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let transcript = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(name, transcript))
    }

    pub fn from_pairs<'a>(name: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let transcript = pairs
            .into_iter()
            .map(|(prompt, response)| (content_hash(prompt), response.to_string()))
            .collect();
        Self::new(name, transcript)
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl ChatBackend for MockChatBackend {
    fn complete(&self, prompt: &str, _params: GenerationParams) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = content_hash(prompt);
        self.transcript
            .get(&key)
            .cloned()
            .ok_or(BackendError::MissingTranscript(key))
    }

    fn id(&self) -> &str {
        &self.name
    }

    fn describe(&self) -> String {
        format!("mock:{}", self.name)
    }
}
