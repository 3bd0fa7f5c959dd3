//! Chat-completion providers: an HTTP client for messages-style endpoints,
//! an offline rule-table mock, retries with exponential backoff, a
//! per-provider in-flight limit and a content-addressed response cache.

mod cache;
mod http;
mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, ResponseCache};
pub use http::HttpBackend;
pub use mock::{MatcherKind, MockBackend, MockRule, RuleTable, DEFAULT_MOCK_RESPONSE};

pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    /// Retryable failure of a single attempt (timeout, connection, 429, 5xx).
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("rule table line {line}: {message}")]
    RuleTable { line: usize, message: String },
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    Mock,
}

fn default_concurrency() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_auth_header() -> String {
    "Authorization".to_string()
}

/// Configuration of one model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub id: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Header carrying the key. `Authorization` gets a `Bearer ` prefix.
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Rule table file of a mock provider.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl ProviderSpec {
    pub fn mock(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            model_name: format!("mock-{id}"),
            id,
            kind: ProviderKind::Mock,
            endpoint: None,
            api_key_env: None,
            auth_header: default_auth_header(),
            rules: None,
            max_concurrency: default_concurrency(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn http(id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>, key_env: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: model.into(),
            api_key_env: Some(key_env.into()),
            ..Self::mock(id)
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.id.trim().is_empty() {
            return Err(ProviderError::Config("provider id is empty".into()));
        }
        if self.max_concurrency < 1 {
            return Err(ProviderError::Config(format!("{}: max_concurrency must be ≥ 1", self.id)));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(ProviderError::Config(format!("{}: timeout must be positive", self.id)));
        }
        if self.kind == ProviderKind::Http && (self.endpoint.is_none() || self.api_key_env.is_none()) {
            return Err(ProviderError::Config(format!(
                "{}: http providers need endpoint and api_key_env",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub provider_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Request with temperature 0 and the default token budget.
    pub fn new(provider_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub cached: bool,
    pub latency: Duration,
}

/// Transport behind a [`Provider`]: performs exactly one attempt.
pub trait Backend: Send + Sync {
    fn call(&self, spec: &ProviderSpec, req: &CompletionRequest) -> Result<String, ProviderError>;
}

/// Anything that can answer a prompt: a configured [`Provider`], or a
/// scripted stand-in in tests.
pub trait ChatModel: Send + Sync {
    fn id(&self) -> &str;
    fn ask(&self, prompt: &str) -> Result<CompletionResponse, ProviderError>;
}

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { base: Duration::from_secs(1), factor: 2.0, jitter: 0.2 }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.base.as_secs_f64() * self.factor.powi(retry as i32);
        let j = if self.jitter > 0.0 {
            rand::rng().random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Duration::from_secs_f64((nominal * (1.0 + j)).max(0.0))
    }
}

/// Counting semaphore bounding in-flight calls.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Call counters of one provider.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProviderStats {
    /// Completed backend calls.
    pub remote_calls: u64,
    /// Backend attempts including failed ones.
    pub attempts: u64,
    pub cache_hits: u64,
    pub failures: u64,
}

impl ProviderStats {
    pub fn cache_hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.remote_calls;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

#[derive(Default)]
struct Counters {
    remote_calls: AtomicU64,
    attempts: AtomicU64,
    cache_hits: AtomicU64,
    failures: AtomicU64,
}

/// A configured endpoint with retries, concurrency limit and optional cache.
pub struct Provider {
    spec: ProviderSpec,
    backend: Box<dyn Backend>,
    gate: Gate,
    backoff: Backoff,
    cache: Option<Arc<ResponseCache>>,
    counters: Counters,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Provider {
    /// Builds the backend named by `spec.kind`. Mock providers load their
    /// rule table here; without one every answer is the default.
    pub fn from_spec(spec: ProviderSpec) -> Result<Self, ProviderError> {
        spec.validate()?;
        let backend: Box<dyn Backend> = match spec.kind {
            ProviderKind::Http => Box::new(HttpBackend::new(&spec)),
            ProviderKind::Mock => match &spec.rules {
                Some(path) => Box::new(MockBackend::new(RuleTable::load(path)?)),
                None => Box::new(MockBackend::new(RuleTable::default())),
            },
        };
        Ok(Self::with_backend(spec, backend))
    }

    pub fn with_backend(spec: ProviderSpec, backend: Box<dyn Backend>) -> Self {
        Self {
            gate: Gate::new(spec.max_concurrency.max(1)),
            spec,
            backend,
            backoff: Backoff::default(),
            cache: None,
            counters: Counters::default(),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    /// Routes [`ChatModel::ask`] through `cache`.
    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    pub fn stats(&self) -> ProviderStats {
        let c = &self.counters;
        ProviderStats {
            remote_calls: c.remote_calls.load(Ordering::Relaxed),
            attempts: c.attempts.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            failures: c.failures.load(Ordering::Relaxed),
        }
    }

    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest::new(self.spec.id.clone(), prompt)
    }

    /// Uncached completion. Transient failures are retried up to
    /// `max_retries` times; at most `max_concurrency` attempts are in flight.
    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        if req.prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let start = Instant::now();
        let attempts = self.spec.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            let result = {
                let _permit = self.gate.acquire();
                self.counters.attempts.fetch_add(1, Ordering::Relaxed);
                self.backend.call(&self.spec, req)
            };
            match result {
                Ok(text) => {
                    self.counters.remote_calls.fetch_add(1, Ordering::Relaxed);
                    return Ok(CompletionResponse { text, cached: false, latency: start.elapsed() });
                }
                Err(e) if e.is_transient() => {
                    tracing::debug!(provider = %self.spec.id, attempt, error = %e, "retrying");
                    last = Some(e);
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.backoff.delay(attempt));
                    }
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(e);
                }
            }
        }
        self.counters.failures.fetch_add(1, Ordering::Relaxed);
        Err(ProviderError::Exhausted {
            attempts,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    /// Completion through `cache`: a hit returns the stored text without any
    /// backend call; a miss completes and stores.
    pub fn cached_complete(&self, req: &CompletionRequest, cache: &ResponseCache) -> Result<CompletionResponse, ProviderError> {
        if req.prompt.trim().is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        let key = cache_key(&self.spec, req);
        let start = Instant::now();
        let _flight = cache.lock_key(&key);
        if let Some(text) = cache.get(&key) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(CompletionResponse { text, cached: true, latency: start.elapsed() });
        }
        let resp = self.complete(req)?;
        cache.put(&key, &resp.text);
        Ok(resp)
    }
}

impl ChatModel for Provider {
    fn id(&self) -> &str {
        &self.spec.id
    }

    fn ask(&self, prompt: &str) -> Result<CompletionResponse, ProviderError> {
        let req = self.request(prompt);
        match &self.cache {
            Some(cache) => self.cached_complete(&req, cache),
            None => self.complete(&req),
        }
    }
}
