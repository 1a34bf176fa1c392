//! Embedding providers.
//!
//! Every similarity computed by the engine is an inner product between two
//! [`Embedding`]s of the same dimension. The [`Embedder`] trait is the
//! provider contract; [`ReferenceEmbedder`] is a deterministic hashing
//! embedder used for tests and desk-scale corpora, and [`RemoteEmbedder`]
//! talks to an HTTP service that hosts a real model.

mod infonce;
mod reference;
mod remote;

pub use infonce::{infonce_loss, infonce_loss_with_grad, ContrastiveBatch, InfoNceGrad};
pub use reference::{fnv1a64, ReferenceEmbedder};
pub use remote::RemoteEmbedder;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("frame set is empty")]
    EmptyFrameSet,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("remote embedder unavailable: {0}")]
    RemoteEmbedderUnavailable(String),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
}

/// A fixed-dimension vector in inner-product space.
///
/// `missing` marks an absent modality (empty text, no frames); such an
/// embedding is all zeros and contributes nothing to an inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub missing: bool,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Self {
            values,
            missing: false,
        }
    }

    pub fn missing(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            missing: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Inner product accumulated in double precision.
    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Reference,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dimension: usize,
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dimension: 256,
            provider: ProviderKind::Reference,
            endpoint: None,
            timeout_ms: 10_000,
            retries: 2,
        }
    }
}

impl EmbedderConfig {
    pub fn reference(dimension: usize) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::InvalidConfig("dimension must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(EmbedError::InvalidConfig("timeout must be > 0".into()));
        }
        if self.provider == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::InvalidConfig(
                "remote provider requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    /// Builds the provider described by this config.
    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.provider {
            ProviderKind::Reference => Arc::new(ReferenceEmbedder::new(self.dimension)),
            ProviderKind::Remote => Arc::new(RemoteEmbedder::new(self)?),
        })
    }
}

/// Provider contract for the retrieval model.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError>;

    /// One joint embedding for an ordered set of opaque frame payloads.
    fn embed_frames(&self, frames: &[Vec<u8>]) -> Result<Embedding, EmbedError>;
}

/// Convenience wrapper: builds the configured provider and embeds `text`.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> Result<Embedding, EmbedError> {
    cfg.build()?.embed_text(text)
}

pub fn embed_frames(frames: &[Vec<u8>], cfg: &EmbedderConfig) -> Result<Embedding, EmbedError> {
    cfg.build()?.embed_frames(frames)
}
