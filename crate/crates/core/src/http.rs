//! JSON POST with retry, shared by the chat and embedding clients.

use std::sync::Arc;
use std::time::Duration;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("authentication rejected with status {status}")]
    AuthFailure { status: u16 },
    #[error("server returned status {status} after {attempts} attempts: {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 1000,
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Nominal delay before retry number `retry` (0-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        let ms = self.backoff_base_ms as f64 * self.factor.powi(retry as i32);
        Duration::from_secs_f64(ms / 1000.0)
    }

    fn jittered_delay(&self, retry: u32) -> Duration {
        let nominal = self.nominal_delay(retry).as_secs_f64();
        let scale = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * scale)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub fn real_sleeper() -> Sleeper {
    Arc::new(std::thread::sleep)
}

/// Blocking JSON client.
#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    pub policy: RetryPolicy,
    sleeper: Sleeper,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("policy", &self.policy).finish()
    }
}

enum Failure {
    Retry(HttpError),
    Fatal(HttpError),
}

impl JsonClient {
    pub fn new(timeout: Duration, policy: RetryPolicy) -> Self {
        JsonClient {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            policy,
            sleeper: real_sleeper(),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// POSTs `body` and returns the decoded JSON reply plus the number of
    /// attempts made. 429, 5xx and timeouts are retried; 401/403 are not.
    pub fn post(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<(Value, u32), HttpError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.try_once(url, body, bearer, attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => {
                    let retry = attempt - 1;
                    if retry >= self.policy.max_retries {
                        return Err(e);
                    }
                    let delay = self.policy.jittered_delay(retry);
                    warn!("{url}: {e}; retrying in {delay:?}");
                    (self.sleeper)(delay);
                }
            }
        }
    }

    fn try_once(&self, url: &str, body: &Value, bearer: Option<&str>, attempts: u32) -> Result<Value, Failure> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| Failure::Fatal(HttpError::MalformedResponse(e.to_string()))),
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                match status {
                    401 | 403 => Err(Failure::Fatal(HttpError::AuthFailure { status })),
                    429 => Err(Failure::Retry(HttpError::RateLimited { attempts })),
                    s if s >= 500 => Err(Failure::Retry(HttpError::Status {
                        status,
                        attempts,
                        body: text,
                    })),
                    _ => Err(Failure::Fatal(HttpError::Status {
                        status,
                        attempts,
                        body: text,
                    })),
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                let lower = msg.to_ascii_lowercase();
                if lower.contains("timed out") || lower.contains("timeout") {
                    Err(Failure::Retry(HttpError::Timeout { attempts }))
                } else {
                    Err(Failure::Fatal(HttpError::Transport(msg)))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.nominal_delay(0), Duration::from_secs(1));
        assert_eq!(p.nominal_delay(1), Duration::from_secs(2));
        assert_eq!(p.nominal_delay(3), Duration::from_secs(8));
        for r in 0..4 {
            let d = p.jittered_delay(r).as_secs_f64();
            let n = p.nominal_delay(r).as_secs_f64();
            assert!(d >= 0.8 * n - 1e-9 && d <= 1.2 * n + 1e-9);
        }
    }
}
