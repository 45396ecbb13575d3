//! Image embeddings behind the semantic-similarity term.
//!
//! The score only needs *some* deterministic image encoder, so the encoder is
//! an [`EmbeddingProvider`] trait object. [`MockProvider`] is a hermetic
//! stand-in, [`RemoteProvider`] talks to an HTTP sidecar, and
//! [`CachedProvider`] memoizes either on disk.

mod cache;
mod mock;
mod remote;

pub use cache::{CachedProvider, CACHE_MAGIC};
pub use mock::MockProvider;
pub use remote::{EmbedRequest, EmbedResponse, RemoteProvider};

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("network error: {0}")]
    Network(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A feature vector produced by one provider.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    provider_id: String,
    vector: Vec<f32>,
}

impl Embedding {
    pub fn new(provider_id: impl Into<String>, vector: Vec<f32>) -> Result<Self, EmbeddingError> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self {
            provider_id: provider_id.into(),
            vector,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Deterministic image encoder. Implementations must be safe to call from
/// several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError> {
        (**self).embed(image)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError> {
        (**self).embed(image)
    }
}

/// `a . b / (|a| |b|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.vector.iter().zip(&b.vector) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
