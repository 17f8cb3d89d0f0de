//! Premise-hypothesis NLI scoring and obligation classification behind
//! pluggable backends.
//!
//! [`Gateway`] is the single entry point. It validates inputs, memoizes
//! results per `(role, premise, hypothesis)`, deduplicates pairs, splits the
//! remainder into batches and checks every returned triple against the
//! probability simplex. Backends:
//!
//! * [`RemoteBackend`]: HTTP inference service (`POST /v1/nli`, `POST /v1/obligation`).
//! * [`FixtureBackend`]: precomputed triples keyed by a content hash; misses are errors.
//! * [`HeuristicBackend`]: lexical fallback for tests and degraded runs. Reports
//!   produced with it carry a watermark.

mod fixture;
mod heuristic;
mod remote;

pub use fixture::{obligation_hash, pair_hash, FixtureBackend, FixtureStore};
pub use heuristic::{HeuristicBackend, DEONTIC_MARKERS};
pub use remote::{RemoteBackend, RetryPolicy};

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

/// Maximum allowed deviation of `e + c + n` from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("input {index} contains an empty string")]
    EmptyInput { index: usize },
    #[error("backend unreachable for inputs {range:?} after {attempts} attempts: {message}")]
    Transport {
        range: Range<usize>,
        attempts: u32,
        message: String,
    },
    #[error("no fixture for input {index} (hash {hash})")]
    FixtureMiss { index: usize, hash: String },
    #[error("invalid backend response for input {index}: {message}")]
    InvalidResponse { index: usize, message: String },
    #[error("backend not ready: {0}")]
    NotReady(String),
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Rewrites batch-local indices through `map` (local index -> caller index).
    fn remap(self, map: impl Fn(usize) -> usize, len: usize) -> Self {
        match self {
            GatewayError::EmptyInput { index } => GatewayError::EmptyInput { index: map(index) },
            GatewayError::FixtureMiss { index, hash } => GatewayError::FixtureMiss {
                index: map(index),
                hash,
            },
            GatewayError::InvalidResponse { index, message } => GatewayError::InvalidResponse {
                index: map(index),
                message,
            },
            GatewayError::Transport {
                attempts, message, ..
            } => {
                let idx: Vec<usize> = (0..len).map(&map).collect();
                let lo = idx.iter().copied().min().unwrap_or(0);
                let hi = idx.iter().copied().max().map_or(0, |h| h + 1);
                GatewayError::Transport {
                    range: lo..hi,
                    attempts,
                    message,
                }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub entailment: f64,
    pub contradiction: f64,
    pub neutral: f64,
}

impl NliProbs {
    pub fn new(entailment: f64, contradiction: f64, neutral: f64) -> Result<Self, String> {
        let p = Self {
            entailment,
            contradiction,
            neutral,
        };
        p.check()?;
        Ok(p)
    }

    /// Each component in [0, 1], sum within [`SIMPLEX_TOLERANCE`] of 1.
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("entailment", self.entailment),
            ("contradiction", self.contradiction),
            ("neutral", self.neutral),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        let sum = self.entailment + self.contradiction + self.neutral;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(format!("probabilities sum to {sum}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObligationLabel {
    pub is_obligation: bool,
    pub confidence: f64,
}

/// Which step an NLI call serves; each role may be bound to its own model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliRole {
    /// Passage-sentence x answer-sentence matrices.
    Matrix,
    /// Obligation coverage checks.
    Coverage,
    /// Question-passage dataset validation.
    Validation,
}

impl NliRole {
    pub const ALL: [NliRole; 3] = [NliRole::Matrix, NliRole::Coverage, NliRole::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            NliRole::Matrix => "matrix",
            NliRole::Coverage => "coverage",
            NliRole::Validation => "validation",
        }
    }
}

impl fmt::Display for NliRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
}

impl NliPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Fixture,
    Heuristic,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::Fixture => "fixture",
            BackendKind::Heuristic => "heuristic",
        })
    }
}

pub trait NliBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// One triple per pair, same order. Errors use indices into `pairs`.
    fn score(&self, role: NliRole, pairs: &[NliPair]) -> Result<Vec<NliProbs>, GatewayError>;
}

pub trait ObligationBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn classify(&self, sentences: &[String]) -> Result<Vec<ObligationLabel>, GatewayError>;
}

/// Model identifiers per role. The service maps roles to checkpoints; these
/// values are carried into report watermarks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelIds {
    pub matrix: String,
    pub coverage: String,
    pub validation: String,
    pub obligation: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        Self {
            matrix: "cross-encoder/nli-deberta-v3-xsmall".into(),
            coverage: "microsoft/deberta-large-mnli".into(),
            validation: "cross-encoder/nli-deberta-v3-xsmall".into(),
            obligation: "legalbert-obligation-classifier".into(),
        }
    }
}

impl ModelIds {
    pub fn for_role(&self, role: NliRole) -> &str {
        match role {
            NliRole::Matrix => &self.matrix,
            NliRole::Coverage => &self.coverage,
            NliRole::Validation => &self.validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl BackendConfig {
    pub fn heuristic() -> Self {
        Self {
            kind: BackendKind::Heuristic,
            endpoint: None,
            fixture_path: None,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn fixture(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Fixture,
            fixture_path: Some(path.into()),
            ..Self::heuristic()
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::heuristic()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Backend for the NLI roles without an override.
    pub nli: BackendConfig,
    #[serde(default)]
    pub role_overrides: HashMap<NliRole, BackendConfig>,
    /// Defaults to `nli` when absent.
    #[serde(default)]
    pub obligation: Option<BackendConfig>,
    #[serde(default)]
    pub models: ModelIds,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_batch_size() -> usize {
    64
}

fn default_in_flight() -> usize {
    4
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            nli: BackendConfig::heuristic(),
            role_overrides: HashMap::new(),
            obligation: None,
            models: ModelIds::default(),
            batch_size: default_batch_size(),
            max_in_flight: default_in_flight(),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut p = self.permits.lock().expect("semaphore poisoned");
            while *p == 0 {
                p = self.freed.wait(p).expect("semaphore poisoned");
            }
            *p -= 1;
        }
        let out = f();
        *self.permits.lock().expect("semaphore poisoned") += 1;
        self.freed.notify_one();
        out
    }
}

type NliKey = (NliRole, String, String);

/// Memoizing, batching front-end over the configured backends.
pub struct Gateway {
    nli: HashMap<NliRole, Arc<dyn NliBackend>>,
    obligation: Arc<dyn ObligationBackend>,
    models: ModelIds,
    batch_size: usize,
    max_in_flight: usize,
    permits: Semaphore,
    nli_cache: Mutex<HashMap<NliKey, NliProbs>>,
    obligation_cache: Mutex<HashMap<String, ObligationLabel>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("watermark", &self.watermark())
            .field("batch_size", &self.batch_size)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

type BackendPair = (Arc<dyn NliBackend>, Arc<dyn ObligationBackend>);

fn heuristic_pair() -> BackendPair {
    let h = Arc::new(HeuristicBackend);
    (h.clone(), h)
}

impl Gateway {
    /// Every role (NLI and obligation) served by one backend object.
    pub fn uniform<B>(backend: Arc<B>) -> Self
    where
        B: NliBackend + ObligationBackend + 'static,
    {
        let nli: Arc<dyn NliBackend> = backend.clone();
        let obligation: Arc<dyn ObligationBackend> = backend;
        Self::with_backends(
            NliRole::ALL.iter().map(|&r| (r, nli.clone())).collect(),
            obligation,
        )
    }

    pub fn heuristic() -> Self {
        Self::uniform(Arc::new(HeuristicBackend))
    }

    /// Explicit per-role bindings; roles missing from `nli` use the heuristic backend.
    pub fn with_backends(
        mut nli: HashMap<NliRole, Arc<dyn NliBackend>>,
        obligation: Arc<dyn ObligationBackend>,
    ) -> Self {
        for role in NliRole::ALL {
            nli.entry(role).or_insert_with(|| heuristic_pair().0);
        }
        Self {
            nli,
            obligation,
            models: ModelIds::default(),
            batch_size: default_batch_size(),
            max_in_flight: default_in_flight(),
            permits: Semaphore::new(default_in_flight()),
            nli_cache: Mutex::new(HashMap::new()),
            obligation_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        fn build(cfg: &BackendConfig) -> Result<BackendPair, GatewayError> {
            Ok(match cfg.kind {
                BackendKind::Heuristic => heuristic_pair(),
                BackendKind::Fixture => {
                    let path = cfg
                        .fixture_path
                        .as_ref()
                        .ok_or_else(|| GatewayError::Config("fixture backend needs a fixture path".into()))?;
                    let b = Arc::new(FixtureBackend::load(path)?);
                    (b.clone(), b)
                }
                BackendKind::Remote => {
                    let url = cfg
                        .endpoint
                        .as_ref()
                        .ok_or_else(|| GatewayError::Config("remote backend needs an endpoint".into()))?;
                    let b = Arc::new(RemoteBackend::new(url.clone(), cfg.timeout_secs));
                    b.check_health()?;
                    (b.clone(), b)
                }
            })
        }
        let (default_nli, default_obl) = build(&config.nli)?;
        let mut nli = HashMap::new();
        for role in NliRole::ALL {
            let backend = match config.role_overrides.get(&role) {
                Some(cfg) => build(cfg)?.0,
                None => default_nli.clone(),
            };
            nli.insert(role, backend);
        }
        let obligation = match &config.obligation {
            Some(cfg) => build(cfg)?.1,
            None => default_obl,
        };
        Ok(Self::with_backends(nli, obligation)
            .with_models(config.models.clone())
            .with_batching(config.batch_size, config.max_in_flight))
    }

    pub fn with_models(mut self, models: ModelIds) -> Self {
        self.models = models;
        self
    }

    pub fn with_batching(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self.permits = Semaphore::new(self.max_in_flight);
        self
    }

    pub fn models(&self) -> &ModelIds {
        &self.models
    }

    pub fn backend_kind(&self, role: NliRole) -> BackendKind {
        self.nli[&role].kind()
    }

    pub fn obligation_kind(&self) -> BackendKind {
        self.obligation.kind()
    }

    pub fn uses_heuristic(&self) -> bool {
        self.obligation.kind() == BackendKind::Heuristic
            || self.nli.values().any(|b| b.kind() == BackendKind::Heuristic)
    }

    /// Backend description stamped into metric reports.
    pub fn watermark(&self) -> String {
        let mut parts: Vec<String> = NliRole::ALL
            .iter()
            .map(|&r| format!("{r}={}:{}", self.nli[&r].kind(), self.models.for_role(r)))
            .collect();
        parts.push(format!(
            "obligation={}:{}",
            self.obligation.kind(),
            self.models.obligation
        ));
        let mut mark = parts.join(" ");
        if self.uses_heuristic() {
            mark.push_str(" [HEURISTIC FALLBACK]");
        }
        mark
    }

    /// Scores every pair for `role`, preserving order.
    pub fn score_nli(&self, pairs: &[NliPair], role: NliRole) -> Result<Vec<NliProbs>, GatewayError> {
        if let Some(index) = pairs
            .iter()
            .position(|p| p.premise.trim().is_empty() || p.hypothesis.trim().is_empty())
        {
            return Err(GatewayError::EmptyInput { index });
        }

        // unique uncached pairs, each remembered by its first caller index
        let mut pending: Vec<(NliPair, usize)> = Vec::new();
        {
            let cache = self.nli_cache.lock().expect("cache poisoned");
            let mut queued: HashMap<&NliPair, ()> = HashMap::new();
            for (i, p) in pairs.iter().enumerate() {
                let key = (role, p.premise.clone(), p.hypothesis.clone());
                if !cache.contains_key(&key) && queued.insert(p, ()).is_none() {
                    pending.push((p.clone(), i));
                }
            }
        }

        if !pending.is_empty() {
            let backend = self.nli[&role].clone();
            let chunks: Vec<&[(NliPair, usize)]> = pending.chunks(self.batch_size).collect();
            let results = self.run_batches(&chunks, |chunk| {
                let batch: Vec<NliPair> = chunk.iter().map(|(p, _)| p.clone()).collect();
                let out = backend.score(role, &batch)?;
                if out.len() != batch.len() {
                    return Err(GatewayError::InvalidResponse {
                        index: 0,
                        message: format!("expected {} results, got {}", batch.len(), out.len()),
                    });
                }
                for (i, probs) in out.iter().enumerate() {
                    probs
                        .check()
                        .map_err(|message| GatewayError::InvalidResponse { index: i, message })?;
                }
                Ok(out)
            });
            let mut cache = self.nli_cache.lock().expect("cache poisoned");
            for (chunk, result) in chunks.iter().zip(results) {
                let probs = result.map_err(|e| e.remap(|i| chunk[i].1, chunk.len()))?;
                for ((pair, _), p) in chunk.iter().zip(probs) {
                    cache.insert((role, pair.premise.clone(), pair.hypothesis.clone()), p);
                }
            }
        }

        let cache = self.nli_cache.lock().expect("cache poisoned");
        Ok(pairs
            .iter()
            .map(|p| cache[&(role, p.premise.clone(), p.hypothesis.clone())])
            .collect())
    }

    /// Labels each sentence as obligation or not, preserving order.
    pub fn classify_obligations(&self, sentences: &[String]) -> Result<Vec<ObligationLabel>, GatewayError> {
        if let Some(index) = sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(GatewayError::EmptyInput { index });
        }
        let mut pending: Vec<(String, usize)> = Vec::new();
        {
            let cache = self.obligation_cache.lock().expect("cache poisoned");
            for (i, s) in sentences.iter().enumerate() {
                if !cache.contains_key(s) && !pending.iter().any(|(p, _)| p == s) {
                    pending.push((s.clone(), i));
                }
            }
        }
        if !pending.is_empty() {
            let backend = self.obligation.clone();
            let chunks: Vec<&[(String, usize)]> = pending.chunks(self.batch_size).collect();
            let results = self.run_batches(&chunks, |chunk| {
                let batch: Vec<String> = chunk.iter().map(|(s, _)| s.clone()).collect();
                let out = backend.classify(&batch)?;
                if out.len() != batch.len() {
                    return Err(GatewayError::InvalidResponse {
                        index: 0,
                        message: format!("expected {} labels, got {}", batch.len(), out.len()),
                    });
                }
                if let Some(i) = out.iter().position(|l| !(0.0..=1.0).contains(&l.confidence)) {
                    return Err(GatewayError::InvalidResponse {
                        index: i,
                        message: format!("confidence {} outside [0, 1]", out[i].confidence),
                    });
                }
                Ok(out)
            });
            let mut cache = self.obligation_cache.lock().expect("cache poisoned");
            for (chunk, result) in chunks.iter().zip(results) {
                let labels = result.map_err(|e| e.remap(|i| chunk[i].1, chunk.len()))?;
                for ((s, _), l) in chunk.iter().zip(labels) {
                    cache.insert(s.clone(), l);
                }
            }
        }
        let cache = self.obligation_cache.lock().expect("cache poisoned");
        Ok(sentences.iter().map(|s| cache[s]).collect())
    }

    /// Runs batches on up to `max_in_flight` workers; each backend call holds
    /// a gateway-wide permit. Results come back in batch order.
    fn run_batches<C: Sync, T: Send>(
        &self,
        chunks: &[C],
        call: impl Fn(&C) -> Result<T, GatewayError> + Sync,
    ) -> Vec<Result<T, GatewayError>> {
        if chunks.len() == 1 {
            return vec![self.permits.run(|| call(&chunks[0]))];
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<T, GatewayError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.max_in_flight.min(chunks.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.permits.run(|| call(&chunks[i]));
                    *slots[i].lock().expect("slot poisoned") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot poisoned").expect("every batch ran"))
            .collect()
    }
}
