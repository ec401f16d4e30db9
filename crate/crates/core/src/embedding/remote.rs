use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::http::{JsonClient, RetryPolicy, Sleeper};

fn default_dim() -> usize {
    384
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    5
}
fn default_backoff() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBackendConfig {
    pub endpoint_url: String,
    pub model_id: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

/// Client for an OpenAI-compatible `/embeddings` endpoint. Vectors are kept
/// exactly as delivered.
pub struct RemoteEmbedder {
    config: EmbeddingBackendConfig,
    client: JsonClient,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(config: EmbeddingBackendConfig) -> Self {
        let policy = RetryPolicy {
            max_retries: config.max_retries,
            backoff_base_ms: config.backoff_base_ms,
            ..RetryPolicy::default()
        };
        let client = JsonClient::new(Duration::from_secs(config.timeout_s), policy);
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&config.api_key_env).ok()
        };
        RemoteEmbedder {
            config,
            client,
            api_key,
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.client = self.client.with_sleeper(sleeper);
        self
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            log::warn!("empty text embedded as a zero vector");
            return Ok(EmbeddingVector::zeros(self.config.dim, &self.config.model_id));
        }
        let url = format!("{}/embeddings", self.config.endpoint_url.trim_end_matches('/'));
        let body = json!({"model": self.config.model_id, "input": [text]});
        let (reply, _) = self
            .client
            .post(&url, &body, self.api_key.as_deref())
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        let values: Vec<f32> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Remote("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| EmbeddingError::Remote("non-numeric embedding value".into()))?;
        if values.len() != self.config.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.config.dim,
                actual: values.len(),
                context: Some(self.config.model_id.clone()),
            });
        }
        EmbeddingVector::new(values, &self.config.model_id)
    }
}
