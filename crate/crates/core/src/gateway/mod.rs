//! Text generation and embedding access.
//!
//! A [`Gateway`] wraps a [`Backend`] with parameter checks, retries with
//! exponential backoff, a content-addressed response cache and call
//! counters. Backends are the OpenAI-compatible HTTP client and a
//! deterministic mock.

mod cache;
mod http;
mod mock;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use mock::{mock_embedding, MockBackend, MockScript, ScriptRule, MOCK_EMBED_DIM};

use crate::digest::FieldDigest;
use crate::prompts::PromptText;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response schema mismatch: {0}")]
    Schema(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Network(_) => true,
            GatewayError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// Sampling parameters for one generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            max_tokens: 1024,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }
}

impl GenParams {
    pub fn check(&self, max_tokens_ceiling: u32) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Precondition(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 || self.max_tokens > max_tokens_ceiling {
            return Err(GatewayError::Precondition(format!(
                "max_tokens {} outside [1, {max_tokens_ceiling}]",
                self.max_tokens
            )));
        }
        Ok(())
    }

    /// Canonical JSON, used inside prompt digests.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub backend_id: String,
    pub prompt_digest: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub vector: Vec<f64>,
    pub dim: usize,
    pub backend_id: String,
}

/// A text generation and embedding service.
pub trait Backend: Send + Sync {
    /// Stable identity; part of every prompt digest.
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, GatewayError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_delay_ms: 500,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Runs `op` until it succeeds, fails permanently, or the budget of
    /// `max_retries` retries is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempts <= self.max_retries => {
                    tracing::debug!(attempt = attempts, error = %e, "transient backend failure, retrying");
                    std::thread::sleep(self.delay(attempts));
                }
                Err(e) if attempts > 1 => {
                    return Err(GatewayError::Exhausted {
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Counter snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub generate_requests: u64,
    pub generate_attempts: u64,
    pub embed_requests: u64,
    pub embed_attempts: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

#[derive(Default)]
struct Counters {
    generate_requests: AtomicU64,
    generate_attempts: AtomicU64,
    embed_requests: AtomicU64,
    embed_attempts: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

pub const DEFAULT_MAX_TOKENS_CEILING: u32 = 8192;

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    max_tokens_ceiling: u32,
    counters: Counters,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            max_tokens_ceiling: DEFAULT_MAX_TOKENS_CEILING,
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_tokens_ceiling(mut self, ceiling: u32) -> Self {
        self.max_tokens_ceiling = ceiling;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        GatewayStats {
            generate_requests: get(&c.generate_requests),
            generate_attempts: get(&c.generate_attempts),
            embed_requests: get(&c.embed_requests),
            embed_attempts: get(&c.embed_attempts),
            cache_hits: get(&c.cache_hits),
            cache_misses: get(&c.cache_misses),
        }
    }

    pub fn prompt_digest(&self, prompt: &PromptText, params: &GenParams) -> String {
        FieldDigest::new()
            .field(&prompt.template_version)
            .field(&prompt.text)
            .field(params.canonical())
            .field(self.backend.id())
            .hex()
    }

    /// Generates a completion, serving it from the cache when possible.
    /// Empty completions are reported as [`GatewayError::EmptyCompletion`]
    /// and never cached.
    pub fn generate(&self, prompt: &PromptText, params: &GenParams) -> Result<GenerationResult, GatewayError> {
        bump(&self.counters.generate_requests);
        params.check(self.max_tokens_ceiling)?;
        let digest = self.prompt_digest(prompt, params);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&digest) {
                bump(&self.counters.cache_hits);
                return Ok(GenerationResult {
                    text: entry.text,
                    backend_id: self.backend.id().to_owned(),
                    prompt_digest: digest,
                    cached: true,
                });
            }
            bump(&self.counters.cache_misses);
        }
        let text = self.retry.run(|| {
            bump(&self.counters.generate_attempts);
            self.backend.complete(&prompt.text, params)
        })?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        if let Some(cache) = &self.cache {
            cache.put(
                &digest,
                &CacheEntry::new(prompt, params, &text, self.backend.id()),
            )?;
        }
        Ok(GenerationResult {
            text,
            backend_id: self.backend.id().to_owned(),
            prompt_digest: digest,
            cached: false,
        })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingResult, GatewayError> {
        bump(&self.counters.embed_requests);
        if text.trim().is_empty() {
            return Err(GatewayError::Precondition("cannot embed empty text".into()));
        }
        let vector = self.retry.run(|| {
            bump(&self.counters.embed_attempts);
            self.backend.embed(text)
        })?;
        if vector.is_empty() {
            return Err(GatewayError::Schema("empty embedding".into()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(GatewayError::Schema("non-finite embedding entry".into()));
        }
        Ok(EmbeddingResult {
            dim: vector.len(),
            vector,
            backend_id: self.backend.id().to_owned(),
        })
    }

    /// Generates every prompt with at most `parallelism` requests in flight.
    /// `result[i]` belongs to `prompts[i]`; failures are per item.
    pub fn generate_batch(
        &self,
        prompts: &[PromptText],
        params: &GenParams,
        parallelism: usize,
    ) -> Vec<Result<GenerationResult, GatewayError>> {
        bounded_map(prompts, parallelism, |p| self.generate(p, params))
    }

    pub fn embed_batch(&self, texts: &[String], parallelism: usize) -> Vec<Result<EmbeddingResult, GatewayError>> {
        bounded_map(texts, parallelism, |t| self.embed(t))
    }
}

/// Applies `f` to every item on at most `parallelism` worker threads and
/// returns the results in input order.
pub fn bounded_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}
