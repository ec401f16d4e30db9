//! Chat-completion backends, the response cache and corpus fan-out.

mod cache;
mod enrich;
mod http_backend;
mod mock;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, RetryPolicy};
use crate::prompting::{PromptError, RenderedPrompt};

pub use cache::{prompt_hash, CacheKey, ResponseCache};
pub use enrich::{enrich_corpus, EnrichOptions, EnrichReport, JournalEntry, JournalStatus};
pub use http_backend::HttpChatBackend;
pub use mock::MockBackend;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("authentication failed (status {status})")]
    AuthFailure { status: u16 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("cannot attach image {path}: {message}")]
    Image { path: String, message: String },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GatewayError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        GatewayError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<HttpError> for GatewayError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::RateLimited { attempts } => GatewayError::RateLimited { attempts },
            HttpError::Timeout { attempts } => GatewayError::Timeout { attempts },
            HttpError::AuthFailure { status } => GatewayError::AuthFailure { status },
            HttpError::MalformedResponse(m) => GatewayError::MalformedResponse(m),
            other => GatewayError::Backend(other.to_string()),
        }
    }
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_tokens() -> u32 {
    512
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    5
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff() -> u64 {
    1000
}

/// Connection settings for one chat-completion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    /// Optional client-side cap on requests per second.
    #[serde(default)]
    pub max_requests_per_s: Option<f64>,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            api_key_env: String::new(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            backoff_base_ms: default_backoff(),
            max_requests_per_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.parallelism < 1 {
            return Err(GatewayError::Config("parallelism must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config("temperature must be non-negative".into()));
        }
        if let Some(r) = self.max_requests_per_s {
            if !(r > 0.0) {
                return Err(GatewayError::Config("max_requests_per_s must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            ..RetryPolicy::default()
        }
    }
}

/// One stored model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub item_id: String,
    pub strategy_tag: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub response_text: String,
    /// Unix seconds.
    pub created_at: u64,
}

impl EnrichmentRecord {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            item_id: self.item_id.clone(),
            strategy_tag: self.strategy_tag.clone(),
            model_id: self.model_id.clone(),
            prompt_hash: self.prompt_hash.clone(),
        }
    }
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A prompt addressed to a specific item.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest<'a> {
    pub item_id: &'a str,
    pub prompt: &'a RenderedPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn parallelism(&self) -> usize;
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, GatewayError>;
}

/// Returns the response text, consulting `cache` first.
pub fn complete_cached(
    request: &ChatRequest<'_>,
    backend: &dyn ChatBackend,
    cache: &ResponseCache,
) -> Result<(String, bool), GatewayError> {
    let key = CacheKey::for_request(request, backend.model_id());
    if let Some(record) = cache.get(&key) {
        return Ok((record.response_text, true));
    }
    let completion = backend.complete(request)?;
    let record = EnrichmentRecord {
        item_id: key.item_id.clone(),
        strategy_tag: key.strategy_tag.clone(),
        model_id: key.model_id.clone(),
        prompt_hash: key.prompt_hash.clone(),
        response_text: completion.text,
        created_at: now_unix(),
    };
    let stored = cache.insert(record)?;
    Ok((stored.response_text, false))
}
