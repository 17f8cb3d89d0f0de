//! HTTP client for the inference service.
//!
//! ```text
//! POST /v1/nli         {"role": "matrix", "pairs": [{"premise": "...", "hypothesis": "..."}]}
//!                   -> {"results": [{"entailment": 0.9, "contradiction": 0.05, "neutral": 0.05}]}
//! POST /v1/obligation  {"sentences": ["..."]}
//!                   -> {"results": [{"is_obligation": true, "confidence": 0.93}]}
//! GET  /healthz        200 when every role is loaded
//! ```

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{BackendKind, GatewayError, NliBackend, NliPair, NliProbs, NliRole, ObligationBackend, ObligationLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    role: &'a str,
    pairs: &'a [NliPair],
}

#[derive(Deserialize)]
struct NliResponse {
    results: Vec<NliProbs>,
}

#[derive(Serialize)]
struct ObligationRequest<'a> {
    sentences: &'a [String],
}

#[derive(Deserialize)]
struct ObligationResponse {
    results: Vec<ObligationLabel>,
}

#[derive(Deserialize)]
struct Health {
    #[serde(default)]
    roles: std::collections::BTreeMap<String, bool>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

pub struct RemoteBackend {
    base: String,
    agent: Agent,
    retry: RetryPolicy,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("base", &self.base).finish()
    }
}

impl RemoteBackend {
    pub fn new(base: impl Into<String>, timeout_secs: u64) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Requires `GET /healthz` to answer 200 and, when the body lists role
    /// readiness, every role to be ready.
    pub fn check_health(&self) -> Result<(), GatewayError> {
        let resp = self
            .agent
            .get(&self.url("/healthz"))
            .call()
            .map_err(|e| GatewayError::NotReady(format!("{}: {e}", self.base)))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(GatewayError::NotReady(format!("/healthz returned {status}")));
        }
        let body = resp.into_body().read_to_string().unwrap_or_default();
        if let Ok(health) = serde_json::from_str::<Health>(&body) {
            let missing: Vec<&str> = health
                .roles
                .iter()
                .filter(|(_, ready)| !**ready)
                .map(|(r, _)| r.as_str())
                .collect();
            if !missing.is_empty() {
                return Err(GatewayError::NotReady(format!("roles not ready: {}", missing.join(", "))));
            }
        }
        Ok(())
    }

    fn post_once<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<T, Failure> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retryable(format!("{path} returned {status}")));
        }
        if status != 200 {
            return Err(Failure::Fatal(format!("{path} returned {status}")));
        }
        resp.into_body()
            .read_json()
            .map_err(|e| Failure::Fatal(format!("{path}: bad response body: {e}")))
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B, len: usize) -> Result<T, GatewayError> {
        let mut delay = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(message)) => {
                    return Err(GatewayError::Transport {
                        range: 0..len,
                        attempts: attempt,
                        message,
                    })
                }
                Err(Failure::Retryable(message)) => {
                    log::warn!("attempt {attempt}/{attempts} to {path} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            range: 0..len,
            attempts,
            message: last,
        })
    }
}

impl NliBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn score(&self, role: NliRole, pairs: &[NliPair]) -> Result<Vec<NliProbs>, GatewayError> {
        let resp: NliResponse = self.post(
            "/v1/nli",
            &NliRequest {
                role: role.as_str(),
                pairs,
            },
            pairs.len(),
        )?;
        Ok(resp.results)
    }
}

impl ObligationBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn classify(&self, sentences: &[String]) -> Result<Vec<ObligationLabel>, GatewayError> {
        let resp: ObligationResponse = self.post("/v1/obligation", &ObligationRequest { sentences }, sentences.len())?;
        Ok(resp.results)
    }
}
