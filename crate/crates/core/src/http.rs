//! Blocking JSON-over-HTTP helper with exponential backoff, shared by the
//! remote embedding, completion, and issue clients.

use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2·base, 4·base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    /// Connection failure, timeout, or a retryable status that persisted
    /// through every retry.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response is not valid JSON: {0}")]
    Protocol(String),
}

#[derive(Debug)]
pub struct JsonResponse {
    pub body: Value,
    pub attempts: u32,
    pub latency: Duration,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub fn agent(timeout: Duration) -> ureq::Agent {
    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build();
    ureq::Agent::new_with_config(config)
}

/// POSTs `body` and parses the JSON reply, retrying 429, 5xx, and transport
/// failures. Total attempts never exceed `max_retries + 1`.
pub fn post_json(url: &str, bearer: Option<&str>, body: &Value, policy: &RetryPolicy) -> Result<JsonResponse, HttpError> {
    let agent = agent(policy.timeout);
    let started = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut request = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let failure = match request.send(serde_json::to_vec(body).expect("json body")) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                let text = response.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    let body = serde_json::from_str(&text).map_err(|e| HttpError::Protocol(e.to_string()))?;
                    return Ok(JsonResponse {
                        body,
                        attempts,
                        latency: started.elapsed(),
                    });
                }
                if !retryable(status) {
                    return Err(HttpError::Status { status, body: text });
                }
                format!("http status {status}")
            }
            Err(e) => e.to_string(),
        };
        if attempts > policy.max_retries {
            return Err(HttpError::Transport {
                attempts,
                message: failure,
            });
        }
        tracing::debug!(url, attempts, %failure, "retrying request");
        std::thread::sleep(policy.delay(attempts));
    }
}
