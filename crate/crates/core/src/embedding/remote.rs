use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::image::{encode_png, BitDepth, Image};

/// Body of `POST /embed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub image_b64: String,
    pub format: String,
}

/// Successful `/embed` reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub provider_id: String,
    pub dim: usize,
    pub vector: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

const DEFAULT_RETRIES: u32 = 3;
const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

/// Client for an embedding sidecar speaking the `/embed` JSON contract.
///
/// Connection failures, timeouts, 429 and 5xx replies are retried up to
/// three times with exponential backoff; every other non-200 reply and any
/// schema violation is a protocol error. The first reply fixes the
/// dimension for the lifetime of the client.
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    url: String,
    id: String,
    retries: u32,
    backoff: Duration,
    dim: OnceLock<usize>,
}

enum Failure {
    Transient(EmbeddingError),
    Fatal(EmbeddingError),
}

impl RemoteProvider {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Network(e.to_string()))?;
        let base = endpoint.trim_end_matches('/');
        Ok(Self {
            client,
            url: format!("{base}/embed"),
            id: format!("remote@{base}"),
            retries: DEFAULT_RETRIES,
            backoff: DEFAULT_BACKOFF,
            dim: OnceLock::new(),
        })
    }

    /// Overrides the retry count and the base of the `base * 2^attempt` delay.
    pub fn with_retry_policy(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &EmbedRequest) -> Result<EmbedResponse, Failure> {
        let resp = self.client.post(&self.url).json(body).send().map_err(|e| {
            if e.is_timeout() {
                Failure::Transient(EmbeddingError::Timeout(e.to_string()))
            } else {
                Failure::Transient(EmbeddingError::Network(e.to_string()))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Failure::Transient(EmbeddingError::Timeout(e.to_string()))
            } else {
                Failure::Transient(EmbeddingError::Network(e.to_string()))
            }
        })?;
        if !status.is_success() {
            let detail = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            let msg = format!("HTTP {}: {detail}", status.as_u16());
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Failure::Transient(EmbeddingError::Network(msg))
            } else {
                Failure::Fatal(EmbeddingError::Protocol(msg))
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(EmbeddingError::Protocol(format!("bad /embed body: {e}"))))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, image: &Image) -> Result<Embedding, EmbeddingError> {
        let png = encode_png(image, BitDepth::Eight)
            .map_err(|e| EmbeddingError::Protocol(format!("cannot encode image: {e}")))?;
        let body = EmbedRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(png),
            format: "png".into(),
        };
        let mut attempt = 0;
        let reply = loop {
            match self.attempt(&body) {
                Ok(r) => break r,
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(e)) => {
                    if attempt >= self.retries {
                        return Err(e);
                    }
                    log::debug!("retrying {} after: {e}", self.url);
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        };
        if reply.vector.len() != reply.dim {
            return Err(EmbeddingError::Protocol(format!(
                "declared dim {} but vector has {} elements",
                reply.dim,
                reply.vector.len()
            )));
        }
        let fixed = *self.dim.get_or_init(|| reply.dim);
        if fixed != reply.dim {
            return Err(EmbeddingError::Protocol(format!(
                "dimension changed from {fixed} to {}",
                reply.dim
            )));
        }
        let vector = reply.vector.iter().map(|&v| v as f32).collect();
        Embedding::new(self.id.clone(), vector)
            .map_err(|_| EmbeddingError::Protocol("non-finite vector element".into()))
    }
}
