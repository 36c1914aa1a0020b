//! Chat-completion backends: an OpenAI-compatible HTTP client and a
//! deterministic replay stub keyed by (system prompt hash, user message).

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_RETRIES: u32 = 2;

/// A single greedy completion request. There are deliberately no sampling
/// knobs on this type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_message: String,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, user_message: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_message: user_message.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResponse {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("no replay fixture for user message {user_message:?}")]
    FixtureMiss { user_message: String },
    #[error("invalid replay fixture: {0}")]
    Fixture(String),
    #[error("LLM backend misconfigured: {0}")]
    Config(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

/// Lowercase hex SHA-256 of a system prompt.
pub fn prompt_sha256(system_prompt: &str) -> String {
    hex::encode(Sha256::digest(system_prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub user_message: String,
    pub response: String,
}

impl ReplayRecord {
    pub fn new(
        system_prompt: &str,
        user_message: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            prompt_sha256: prompt_sha256(system_prompt),
            user_message: user_message.into(),
            response: response.into(),
        }
    }
}

/// Serves recorded responses. Later records override earlier ones with the
/// same key.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<(String, String), String>,
    calls: AtomicUsize,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        let entries = records
            .into_iter()
            .map(|r| ((r.prompt_sha256, r.user_message), r.response))
            .collect();
        Self {
            entries,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let records: Vec<ReplayRecord> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of `complete` calls served or missed so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ReplayBackend {
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (prompt_sha256(&req.system_prompt), req.user_message.clone());
        match self.entries.get(&key) {
            Some(text) => Ok(CompletionResponse {
                text: text.clone(),
                model_id: "replay".into(),
                latency_ms: 0,
            }),
            None => Err(LlmError::FixtureMiss {
                user_message: req.user_message.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff: Duration,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `LLM_API_URL`, `LLM_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var("LLM_API_URL")
            .map_err(|_| LlmError::Config("LLM_API_URL is not set".into()))?;
        let model = std::env::var("LLM_MODEL")
            .map_err(|_| LlmError::Config("LLM_MODEL is not set".into()))?;
        let mut cfg = Self::new(url, model);
        cfg.api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// OpenAI-compatible `chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    /// The JSON body sent to the provider. Temperature is pinned to zero so
    /// providers decode greedily; no other decoding parameter is sent.
    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_message},
            ],
            "max_tokens": req.max_tokens,
            "temperature": 0,
        })
    }

    async fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        let mut builder = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .await
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(AttemptError::Transport(format!("HTTP {}", status.as_u16())));
        }
        let text = resp
            .text()
            .await
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::Provider {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| {
            AttemptError::Fatal(LlmError::Provider {
                status: status.as_u16(),
                body: format!("unparseable body ({e}): {text}"),
            })
        })?;
        let content = parsed["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        if content.trim().is_empty() {
            return Err(AttemptError::Fatal(LlmError::EmptyCompletion));
        }
        Ok(content)
    }
}

enum AttemptError {
    Transport(String),
    Fatal(LlmError),
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let body = self.request_body(req);
        let started = Instant::now();
        let mut delay = self.config.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body).await {
                Ok(text) => {
                    return Ok(CompletionResponse {
                        text,
                        model_id: self.config.model.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transport(message)) => {
                    if attempts > self.config.retries {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    tracing::warn!(attempts, %message, "completion failed, retrying");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
            }
        }
    }
}
