//! Chat-completion clients used for answer and question generation.
//!
//! [`HttpLlmClient`] speaks the OpenAI-style chat-completions protocol.
//! [`EchoClient`] and [`CannedClient`] answer locally and are meant for tests
//! and dry runs.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use ureq::Agent;

use crate::nli::RetryPolicy;

pub const LLM_URL_ENV: &str = "RIRAG_LLM_URL";
pub const LLM_KEY_ENV: &str = "RIRAG_LLM_KEY";

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LlmError {
    #[error("LLM endpoint failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("LLM returned an empty completion")]
    EmptyOutput,
    #[error("LLM response: {0}")]
    InvalidResponse(String),
    #[error("LLM configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4-turbo-1106".into(),
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(settings: &LlmSettings, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            model: settings.model.clone(),
            system: system.into(),
            user: user.into(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        }
    }

    /// Body of a chat-completions request.
    pub fn wire_body(&self) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
        });
        if let Some(m) = self.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
    /// Short description for logs and reports.
    fn describe(&self) -> String;
}

/// A request/response pair with content hashes for later audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_sha256: String,
    pub response_sha256: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Runs one completion, rejecting blank output and recording a transcript.
pub fn complete_logged(client: &dyn LlmClient, request: &ChatRequest) -> Result<(String, Transcript), LlmError> {
    let response = client.complete(request)?;
    if response.trim().is_empty() {
        return Err(LlmError::EmptyOutput);
    }
    let transcript = Transcript {
        request_sha256: sha256_hex(&request.wire_body().to_string()),
        response_sha256: sha256_hex(&response),
        request: request.clone(),
        response: response.clone(),
    };
    log::debug!(
        "llm request {} -> response {}",
        transcript.request_sha256,
        transcript.response_sha256
    );
    Ok((response, transcript))
}

pub struct HttpLlmClient {
    url: String,
    key: Option<String>,
    agent: Agent,
    retry: RetryPolicy,
    min_interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl HttpLlmClient {
    pub fn new(url: impl Into<String>, key: Option<String>, timeout_secs: u64) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            key,
            agent,
            retry: RetryPolicy::default(),
            min_interval: None,
            next_slot: Mutex::new(None),
        }
    }

    /// Reads the endpoint from `RIRAG_LLM_URL` and the bearer token from `RIRAG_LLM_KEY`.
    pub fn from_env(timeout_secs: u64) -> Result<Self, LlmError> {
        let url = std::env::var(LLM_URL_ENV).map_err(|_| LlmError::Config(format!("{LLM_URL_ENV} is not set")))?;
        Ok(Self::new(url, std::env::var(LLM_KEY_ENV).ok(), timeout_secs))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Caps the request rate; calls beyond it wait for their slot.
    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.min_interval = (requests_per_minute > 0).then(|| Duration::from_secs(60) / requests_per_minute);
        self
    }

    fn wait_for_slot(&self) {
        let Some(gap) = self.min_interval else { return };
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + gap);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        self.wait_for_slot();
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, format!("status {status}")));
        }
        if status != 200 {
            let text = resp.into_body().read_to_string().unwrap_or_default();
            return Err((false, format!("status {status}: {text}")));
        }
        let value: serde_json::Value = resp
            .into_body()
            .read_json()
            .map_err(|e| (false, format!("bad body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "missing choices[0].message.content".to_string()))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = request.wire_body();
        let attempts = self.retry.attempts.max(1);
        let mut delay = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((false, message)) => return Err(LlmError::InvalidResponse(message)),
                Err((true, message)) => {
                    log::warn!("llm attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::Transport {
            attempts,
            message: last,
        })
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// Returns the system prompt and user message it was given.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl LlmClient for EchoClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        Ok(format!("{}\n\n{}", request.system, request.user))
    }

    fn describe(&self) -> String {
        "echo".into()
    }
}

/// Replies with the answer of the first key found in the user message.
#[derive(Debug, Clone, Default)]
pub struct CannedClient {
    replies: Vec<(String, String)>,
    fallback: Option<String>,
}

impl CannedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, key: impl Into<String>, answer: impl Into<String>) -> Self {
        self.replies.push((key.into(), answer.into()));
        self
    }

    pub fn otherwise(mut self, answer: impl Into<String>) -> Self {
        self.fallback = Some(answer.into());
        self
    }
}

impl LlmClient for CannedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.replies
            .iter()
            .find(|(k, _)| request.user.contains(k.as_str()))
            .map(|(_, a)| a.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| LlmError::InvalidResponse("no canned reply matches the request".into()))
    }

    fn describe(&self) -> String {
        "canned".into()
    }
}
