//! Uniform access to generative, scoring and reward backends.
//!
//! A [`Gateway`] owns a registry of named [`Backend`]s, retries transient
//! failures with exponential backoff, bounds in-flight requests per backend
//! and memoizes every response in a content-addressed [`ResponseCache`].
//! Stochastic draws carry a `sample_index` nonce so repeated samples are
//! distinct cache entries that replay on re-runs.

mod cache;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheRecord, CachedResponse, ResponseCache};
pub use http::{api_key_env_var, HttpBackend, HttpBackendConfig};
pub use mock::{messages_digest, transcript, MockBackend, MockCall, MockEntry, MockKind, MockMatch, MockRespond};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A generation request. Field order is part of the cache-key contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub backend_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stop: Option<Vec<String>>,
    /// Nonce distinguishing repeated stochastic draws of the same request.
    #[serde(default)]
    pub sample_index: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub logprobs: bool,
}

impl GatewayRequest {
    /// Greedy request with the default token budget.
    pub fn new(backend_id: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            backend_id: backend_id.into(),
            messages,
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
            stop: None,
            sample_index: 0,
            logprobs: false,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn stop(mut self, stop: Vec<String>) -> Self {
        self.stop = Some(stop);
        self
    }

    pub fn sample_index(mut self, i: u32) -> Self {
        self.sample_index = i;
        self
    }

    pub fn with_logprobs(mut self) -> Self {
        self.logprobs = true;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Sum of generated-token log-probabilities, when the backend reports them.
    pub total_logprob: Option<f64>,
    pub cached: bool,
}

/// Teacher-forced log-probability of a target continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub total_logprob: f64,
    #[serde(default)]
    pub n_tokens: Option<u32>,
}

/// Scalar reward from a reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScore(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub complete: bool,
    pub score: bool,
    pub reward: bool,
}

impl Capabilities {
    pub const ALL: Self = Self {
        complete: true,
        score: true,
        reward: true,
    };
    pub const COMPLETE_ONLY: Self = Self {
        complete: true,
        score: false,
        reward: false,
    };

    pub fn has(&self, cap: Capability) -> bool {
        match cap {
            Capability::Complete => self.complete,
            Capability::Score => self.score,
            Capability::Reward => self.reward,
        }
    }

    pub fn from_list(caps: &[Capability]) -> Self {
        Self {
            complete: caps.contains(&Capability::Complete),
            score: caps.contains(&Capability::Score),
            reward: caps.contains(&Capability::Reward),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Complete,
    Score,
    Reward,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Complete => "complete",
            Self::Score => "score",
            Self::Reward => "reward",
        })
    }
}

/// Failure reported by a single backend call.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("unscripted request: {0}")]
    Unscripted(String),
    #[error("backend does not support {0}")]
    Unsupported(Capability),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{backend}` lacks the {capability} capability")]
    Unsupported {
        backend: String,
        capability: Capability,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend `{backend}` failed after {attempts} attempt(s): {source}")]
    Failed {
        backend: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("backend `{backend}` returned a non-finite value")]
    NonFinite { backend: String },
    #[error("response cache: {0}")]
    Cache(String),
}

/// A model endpoint. Implementations must be deterministic for identical
/// inputs if hermetic replays are expected.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn complete(&self, req: &GatewayRequest) -> Result<CachedResponse, BackendError>;

    fn score(&self, _prompt: &[Message], _target: &str) -> Result<TargetScore, BackendError> {
        Err(BackendError::Unsupported(Capability::Score))
    }

    fn reward(&self, _prompt: &[Message], _response: &str) -> Result<f64, BackendError> {
        Err(BackendError::Unsupported(Capability::Reward))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    #[serde(with = "millis")]
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Counting semaphore bounding in-flight calls to one backend.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

struct Registered {
    backend: Arc<dyn Backend>,
    limiter: Limiter,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Registry of backends plus retry, concurrency and caching policy.
pub struct Gateway {
    backends: BTreeMap<String, Registered>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    /// Empty gateway with an in-memory cache and default retry policy.
    pub fn new() -> Self {
        Self {
            backends: BTreeMap::new(),
            cache: Some(ResponseCache::in_memory()),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_cache(mut self, cache: Option<ResponseCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.register_bounded(id, backend, DEFAULT_MAX_IN_FLIGHT);
    }

    pub fn register_bounded(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>, max_in_flight: usize) {
        self.backends.insert(
            id.into(),
            Registered {
                backend,
                limiter: Limiter::new(max_in_flight),
            },
        );
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn backend_ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    fn get(&self, id: &str) -> Result<&Registered, GatewayError> {
        self.backends
            .get(id)
            .ok_or_else(|| GatewayError::UnknownBackend(id.to_owned()))
    }

    pub fn capabilities(&self, id: &str) -> Result<Capabilities, GatewayError> {
        Ok(self.get(id)?.backend.capabilities())
    }

    /// Fail unless `id` is registered and supports `cap`.
    pub fn require(&self, id: &str, cap: Capability) -> Result<(), GatewayError> {
        if self.capabilities(id)?.has(cap) {
            Ok(())
        } else {
            Err(GatewayError::Unsupported {
                backend: id.to_owned(),
                capability: cap,
            })
        }
    }

    fn call_with_retry<T>(
        &self,
        id: &str,
        reg: &Registered,
        mut call: impl FnMut(&dyn Backend) -> Result<T, BackendError>,
    ) -> Result<T, GatewayError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _permit = reg.limiter.acquire();
                call(reg.backend.as_ref())
            };
            match result {
                Ok(v) => return Ok(v),
                Err(BackendError::Unsupported(capability)) => {
                    return Err(GatewayError::Unsupported {
                        backend: id.to_owned(),
                        capability,
                    })
                }
                Err(e) if e.is_retryable() && attempts <= self.retry.max_retries => {
                    tracing::warn!(backend = id, attempt = attempts, error = %e, "retrying backend call");
                    std::thread::sleep(self.retry.delay_before_retry(attempts));
                }
                Err(source) => {
                    return Err(GatewayError::Failed {
                        backend: id.to_owned(),
                        attempts,
                        source,
                    })
                }
            }
        }
    }

    fn cached<T>(
        &self,
        key: &str,
        request: serde_json::Value,
        extract: impl Fn(&CachedResponse) -> Option<T>,
        produce: impl FnOnce() -> Result<CachedResponse, GatewayError>,
    ) -> Result<(T, bool), GatewayError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(key).map_err(GatewayError::Cache)? {
                if let Some(v) = extract(&hit) {
                    return Ok((v, true));
                }
            }
        }
        let fresh = produce()?;
        let value = extract(&fresh)
            .ok_or_else(|| GatewayError::Cache("response kind does not match request".into()))?;
        if let Some(cache) = &self.cache {
            cache.put(key, request, fresh).map_err(GatewayError::Cache)?;
        }
        Ok((value, false))
    }

    pub fn complete(&self, req: &GatewayRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let reg = self.get(&req.backend_id)?;
        if !reg.backend.capabilities().complete {
            return Err(GatewayError::Unsupported {
                backend: req.backend_id.clone(),
                capability: Capability::Complete,
            });
        }
        let key = cache_key(req);
        let request = serde_json::to_value(req).expect("request serializes");
        let ((text, total_logprob), cached) = self.cached(
            &key,
            request,
            |r| match r {
                CachedResponse::Completion { text, total_logprob } => Some((text.clone(), *total_logprob)),
                _ => None,
            },
            || self.call_with_retry(&req.backend_id, reg, |b| b.complete(req)),
        )?;
        if let Some(lp) = total_logprob {
            if !lp.is_finite() || lp > 0.0 {
                return Err(GatewayError::NonFinite {
                    backend: req.backend_id.clone(),
                });
            }
        }
        Ok(Completion {
            text,
            total_logprob,
            cached,
        })
    }

    /// Sum of log-probabilities of `target` following `prompt`.
    pub fn score(&self, backend_id: &str, prompt: &[Message], target: &str) -> Result<TargetScore, GatewayError> {
        self.require(backend_id, Capability::Score)?;
        if target.is_empty() {
            return Ok(TargetScore {
                total_logprob: 0.0,
                n_tokens: Some(0),
            });
        }
        let reg = self.get(backend_id)?;
        let material = serde_json::json!({
            "op": "score",
            "backend_id": backend_id,
            "messages": prompt,
            "target": target,
        });
        let key = digest_value(&material);
        let (score, _) = self.cached(
            &key,
            material,
            |r| match r {
                CachedResponse::Score(s) => Some(*s),
                _ => None,
            },
            || {
                self.call_with_retry(backend_id, reg, |b| b.score(prompt, target))
                    .map(CachedResponse::Score)
            },
        )?;
        if !score.total_logprob.is_finite() || score.total_logprob > 0.0 {
            return Err(GatewayError::NonFinite {
                backend: backend_id.to_owned(),
            });
        }
        Ok(score)
    }

    pub fn reward(&self, backend_id: &str, prompt: &[Message], response: &str) -> Result<RewardScore, GatewayError> {
        self.require(backend_id, Capability::Reward)?;
        let reg = self.get(backend_id)?;
        let material = serde_json::json!({
            "op": "reward",
            "backend_id": backend_id,
            "messages": prompt,
            "response": response,
        });
        let key = digest_value(&material);
        let (value, _) = self.cached(
            &key,
            material,
            |r| match r {
                CachedResponse::Reward { value } => Some(*value),
                _ => None,
            },
            || {
                self.call_with_retry(backend_id, reg, |b| b.reward(prompt, response))
                    .map(|value| CachedResponse::Reward { value })
            },
        )?;
        if !value.is_finite() {
            return Err(GatewayError::NonFinite {
                backend: backend_id.to_owned(),
            });
        }
        Ok(RewardScore(value))
    }
}

fn digest_value(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Content address of a completion request: SHA-256 over the canonical JSON
/// of every request field, including the sample-index nonce.
pub fn cache_key(req: &GatewayRequest) -> String {
    digest_value(&serde_json::json!({ "op": "complete", "request": req }))
}
