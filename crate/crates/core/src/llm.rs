//! Chat-completion backends: a client for `/chat/completions` services and
//! two deterministic mocks for offline runs.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{post_json, HttpError, RetryPolicy};
use crate::ingest::SOURCE_PREFIX;
use crate::prompt::AssembledPrompt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("completion transport error: {0}")]
    Transport(HttpError),
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("llm config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    RemoteHttp,
    #[default]
    MockEchoContext,
    MockCanned,
}

impl std::str::FromStr for LlmBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote_http" | "remote" => Ok(Self::RemoteHttp),
            "mock_echo_context" | "echo" => Ok(Self::MockEchoContext),
            "mock_canned" | "canned" => Ok(Self::MockCanned),
            other => Err(format!("unknown llm backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: LlmBackend,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_seconds: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    /// Reply of the `mock_canned` backend.
    pub canned_response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: LlmBackend::MockEchoContext,
            endpoint_url: None,
            model_name: "gpt-4".into(),
            temperature: 0.0,
            max_output_tokens: 1000,
            timeout_seconds: 60,
            max_retries: 3,
            retry_base_ms: 1000,
            canned_response: None,
            api_key: None,
        }
    }
}

impl LlmConfig {
    /// Applies `LLM_BASE_URL` and `LLM_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var("LLM_BASE_URL") {
            self.endpoint_url = Some(url);
        }
        if let Ok(key) = std::env::var("LLM_API_KEY") {
            self.api_key = Some(key);
        }
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be >= 1".into()));
        }
        match self.backend {
            LlmBackend::RemoteHttp if self.endpoint_url.is_none() => {
                Err(LlmError::Config("remote_http backend requires endpoint_url".into()))
            }
            LlmBackend::MockCanned if self.canned_response.is_none() => {
                Err(LlmError::Config("mock_canned backend requires canned_response".into()))
            }
            _ => Ok(()),
        }
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.retry_base_ms),
            timeout: Duration::from_secs(self.timeout_seconds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub prompt_words: usize,
    /// HTTP attempts made; 0 for mock backends.
    pub attempts: u32,
}

/// Splits a chunk text into its body and trailing citation line.
fn split_source(text: &str) -> (&str, Option<&str>) {
    match text.rfind(&format!("\n{SOURCE_PREFIX}")) {
        Some(i) => (&text[..i], Some(&text[i + 1..])),
        None => (text, None),
    }
}

/// The echo reply: every context body, most similar first, then the first
/// citation line.
pub fn echo_context(prompt: &AssembledPrompt) -> String {
    let mut bodies = Vec::new();
    let mut first_source = None;
    for ctx in &prompt.contexts {
        let (body, source) = split_source(ctx);
        bodies.push(body);
        if first_source.is_none() {
            first_source = source;
        }
    }
    let mut text = bodies.join("\n\n");
    if let Some(source) = first_source {
        text.push('\n');
        text.push_str(source);
    }
    text
}

pub fn complete(prompt: &AssembledPrompt, cfg: &LlmConfig) -> Result<Completion, LlmError> {
    cfg.validate()?;
    let started = Instant::now();
    let (text, finish_reason, attempts) = match cfg.backend {
        LlmBackend::MockEchoContext => (echo_context(prompt), FinishReason::Stop, 0),
        LlmBackend::MockCanned => (cfg.canned_response.clone().unwrap_or_default(), FinishReason::Stop, 0),
        LlmBackend::RemoteHttp => remote_complete(prompt, cfg)?,
    };
    Ok(Completion {
        text,
        finish_reason,
        latency_ms: started.elapsed().as_millis() as u64,
        prompt_words: prompt.estimated_words,
        attempts,
    })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

fn remote_complete(prompt: &AssembledPrompt, cfg: &LlmConfig) -> Result<(String, FinishReason, u32), LlmError> {
    let endpoint = cfg.endpoint_url.as_deref().unwrap_or_default();
    let url = format!("{}/chat/completions", endpoint.trim_end_matches('/'));
    let body = json!({
        "model": cfg.model_name,
        "messages": prompt.messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    });
    let response = post_json(&url, cfg.api_key.as_deref(), &body, &cfg.retry_policy()).map_err(|e| match e {
        HttpError::Protocol(m) => LlmError::Protocol(m),
        other => LlmError::Transport(other),
    })?;
    let parsed: ChatResponse =
        serde_json::from_value(response.body).map_err(|e| LlmError::Protocol(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
    let finish = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok((choice.message.content.unwrap_or_default(), finish, response.attempts))
}
