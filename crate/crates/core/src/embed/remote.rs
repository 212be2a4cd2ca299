use serde::Deserialize;
use serde_json::json;

use super::{check_inputs, EmbedError, Embedder, EmbedderConfig, EmbeddingVector, Result};
use crate::http::{post_json, HttpError};

/// Client for `POST {endpoint}/embeddings` services.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    cfg: EmbedderConfig,
    url: String,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        let endpoint = cfg
            .endpoint_url
            .as_deref()
            .ok_or_else(|| EmbedError::Config("remote_http backend requires endpoint_url".into()))?;
        Ok(Self {
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            cfg,
        })
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({
            "model": self.cfg.model_name,
            "input": texts,
        });
        let response = post_json(&self.url, self.cfg.api_key.as_deref(), &body, &self.cfg.retry_policy())
            .map_err(|e| match e {
                HttpError::Protocol(m) => EmbedError::Protocol(m),
                other => EmbedError::Transport(other),
            })?;
        let parsed: EmbeddingsResponse =
            serde_json::from_value(response.body).map_err(|e| EmbedError::Protocol(e.to_string()))?;

        let mut slots: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for datum in parsed.data {
            let slot = slots
                .get_mut(datum.index)
                .ok_or_else(|| EmbedError::Protocol(format!("index {} out of range", datum.index)))?;
            *slot = Some(datum.embedding);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| {
                let values = slot.ok_or_else(|| EmbedError::Protocol(format!("missing embedding for input {i}")))?;
                if values.len() != self.cfg.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.cfg.dim,
                        got: values.len(),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(EmbedError::Protocol(format!("non-finite value in embedding {i}")));
                }
                let v = EmbeddingVector(values);
                if self.cfg.normalize {
                    v.normalized().ok_or(EmbedError::Unembeddable(i))
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn label(&self) -> String {
        self.cfg.label()
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_inputs(texts)?;
        let prepared: Vec<String> = texts.iter().map(|t| crate::text::collapse_whitespace(t)).collect();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in prepared.chunks(self.cfg.batch_size) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}
