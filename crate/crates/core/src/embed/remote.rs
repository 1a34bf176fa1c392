use super::{EmbedError, Embedder, EmbedderConfig, Embedding};
use crate::remote::JsonClient;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EmbedRequest<'a> {
    Text { text: &'a str },
    Frames { frames: Vec<String> },
}

#[derive(Deserialize)]
struct EmbedResponse {
    values: Vec<f32>,
}

/// Client for an embedding service speaking `POST /embed`.
///
/// Vectors are used as returned; the engine never renormalizes them.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: JsonClient,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| EmbedError::InvalidConfig("remote provider requires an endpoint".into()))?;
        Ok(Self {
            client: JsonClient::new(endpoint, Duration::from_millis(cfg.timeout_ms), cfg.retries),
            dimension: cfg.dimension,
        })
    }

    fn call(&self, req: &EmbedRequest<'_>) -> Result<Embedding, EmbedError> {
        let resp: EmbedResponse = self
            .client
            .post("/embed", req)
            .map_err(|e| EmbedError::RemoteEmbedderUnavailable(e.to_string()))?;
        if resp.values.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                actual: resp.values.len(),
            });
        }
        if resp.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::RemoteEmbedderUnavailable(
                "response contained non-finite values".into(),
            ));
        }
        Ok(Embedding::new(resp.values))
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Ok(Embedding::missing(self.dimension));
        }
        self.call(&EmbedRequest::Text { text })
    }

    fn embed_frames(&self, frames: &[Vec<u8>]) -> Result<Embedding, EmbedError> {
        if frames.is_empty() {
            return Err(EmbedError::EmptyFrameSet);
        }
        let engine = base64::engine::general_purpose::STANDARD;
        let frames = frames.iter().map(|f| engine.encode(f)).collect();
        self.call(&EmbedRequest::Frames { frames })
    }
}
