use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendConfig, ChatBackend, ChatRequest, Completion, GatewayError};
use crate::http::{JsonClient, Sleeper};

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatBackend {
    config: BackendConfig,
    client: JsonClient,
    api_key: Option<String>,
    next_slot: Mutex<Instant>,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpChatBackend {
    /// Builds the client; the bearer token is read from the environment
    /// variable named by `api_key_env`, if set.
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&config.api_key_env).ok()
        };
        let client = JsonClient::new(Duration::from_secs(config.timeout_s), config.retry_policy());
        Ok(HttpChatBackend {
            config,
            client,
            api_key,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.client = self.client.with_sleeper(sleeper);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint_url.trim_end_matches('/'))
    }

    fn throttle(&self) {
        let Some(rate) = self.config.max_requests_per_s else {
            return;
        };
        let interval = Duration::from_secs_f64(1.0 / rate);
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = (*slot).max(now);
            *slot = start + interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    pub fn request_body(&self, request: &ChatRequest<'_>) -> Result<Value, GatewayError> {
        let mut content = vec![json!({"type": "text", "text": request.prompt.text})];
        if let Some(img) = &request.prompt.image_ref {
            content.push(json!({"type": "image_url", "image_url": {"url": image_url(img)?}}));
        }
        Ok(json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }))
    }
}

/// URLs pass through; local files are inlined as base64 data URIs.
pub(crate) fn image_url(image_ref: &str) -> Result<String, GatewayError> {
    if image_ref.contains("://") || image_ref.starts_with("data:") {
        return Ok(image_ref.to_string());
    }
    let path = Path::new(image_ref);
    let bytes = std::fs::read(path).map_err(|e| GatewayError::Image {
        path: image_ref.to_string(),
        message: e.to_string(),
    })?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

impl ChatBackend for HttpChatBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn parallelism(&self) -> usize {
        self.config.parallelism
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, GatewayError> {
        let body = self.request_body(request)?;
        self.throttle();
        let (reply, attempts) = self.client.post(&self.url(), &body, self.api_key.as_deref())?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
        Ok(Completion {
            text: text.to_string(),
            attempts,
        })
    }
}
