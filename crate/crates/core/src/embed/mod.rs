//! Text embedding backends.
//!
//! Two interchangeable backends sit behind [`Embedder`]: a deterministic
//! signed feature-hashing embedder that needs no external service, and a
//! client for any service speaking the common `/embeddings` REST shape.
//! Queries and corpus text must go through the same backend and config for
//! cosine scores to be meaningful.

mod local;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::{fnv1a_seeded, LocalHashedEmbedder, HASH_SEED_BUCKET, HASH_SEED_SIGN};
pub use remote::RemoteEmbedder;

use crate::http::{HttpError, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("unembeddable text #{0}: no alphanumeric tokens")]
    Unembeddable(usize),
    #[error("embedding transport error: {0}")]
    Transport(HttpError),
    #[error("embedding backend returned dimension {got}, configured {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed embedding response: {0}")]
    Protocol(String),
    #[error("embedder config: {0}")]
    Config(String),
}

impl EmbedError {
    /// Whether retrying the same call later may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(HttpError::Transport { .. }))
    }
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// A fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(self.0.iter().map(|&v| (f64::from(v) / norm) as f32).collect()))
    }

    /// Exact cosine similarity, computed in f64. Zero vectors score 0.
    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (dot / denom).clamp(-1.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedBackend {
    RemoteHttp,
    #[default]
    LocalHashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub backend: EmbedBackend,
    pub dim: usize,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub batch_size: usize,
    pub normalize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub timeout_seconds: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: EmbedBackend::LocalHashed,
            dim: 384,
            endpoint_url: None,
            model_name: None,
            batch_size: 32,
            normalize: true,
            api_key: None,
            max_retries: 3,
            retry_base_ms: 1000,
            timeout_seconds: 60,
        }
    }
}

impl EmbedderConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    /// Applies `EMBED_BASE_URL` and `EMBED_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var("EMBED_BASE_URL") {
            self.endpoint_url = Some(url);
        }
        if let Ok(key) = std::env::var("EMBED_API_KEY") {
            self.api_key = Some(key);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        if self.backend == EmbedBackend::RemoteHttp && self.endpoint_url.is_none() {
            return Err(EmbedError::Config("remote_http backend requires endpoint_url".into()));
        }
        Ok(())
    }

    pub(crate) fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.retry_base_ms),
            timeout: Duration::from_secs(self.timeout_seconds),
        }
    }

    /// Short human-readable label used in reports.
    pub fn label(&self) -> String {
        match self.backend {
            EmbedBackend::LocalHashed => format!("local_hashed:{}", self.dim),
            EmbedBackend::RemoteHttp => format!("remote:{}", self.model_name.as_deref().unwrap_or("default")),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Short identifier recorded in reports.
    fn label(&self) -> String {
        format!("custom:{}", self.dim())
    }

    /// One vector per input, in input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed_query(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Box<dyn Embedder>> {
    cfg.validate()?;
    Ok(match cfg.backend {
        EmbedBackend::LocalHashed => Box::new(LocalHashedEmbedder::new(cfg.dim, cfg.normalize)),
        EmbedBackend::RemoteHttp => Box::new(RemoteEmbedder::new(cfg.clone())?),
    })
}

pub(crate) fn check_inputs(texts: &[&str]) -> Result<()> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    Ok(())
}
