//! Embedding backends: a deterministic feature-hash embedder for tests and
//! offline runs, and a remote HTTP embedder for real encoders.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{EmbeddingVector, HttpBackendConfig};
use crate::text::content_tokens;

/// Errors from embedding computation or the remote endpoint.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding endpoint unreachable after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
}

/// Maps text to unit-length vectors. Implementations must be pure within a
/// run: the same text always yields the identical vector.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;
}

/// Cosine similarity; 0.0 whenever either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(seed: u64, token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Seeded feature-hash embedder: each non-stopword token lands in a handful
/// of signed buckets; the accumulated vector is L2-normalized. Bit-identical
/// across process runs for the same `(text, dim, seed)`. Several probes per
/// token keep distinct texts slightly correlated instead of exactly
/// orthogonal, the way real text encoders behave.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

const PROBES_PER_TOKEN: u64 = 4;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 8, "embedding dim must be at least 8");
        Self { dim, seed }
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut acc = vec![0.0f64; self.dim];
        for token in content_tokens(text) {
            for probe in 0..PROBES_PER_TOKEN {
                let h = fnv1a(
                    self.seed ^ probe.wrapping_mul(0x9e37_79b9_7f4a_7c15),
                    &token,
                );
                let idx = ((h >> 1) % self.dim as u64) as usize;
                let sign = if h & 1 == 1 { 1.0 } else { -1.0 };
                acc[idx] += sign;
            }
        }
        Ok(EmbeddingVector::unit(acc))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Remote embedding backend over an OpenAI-style `/embeddings` endpoint,
/// with a per-run memoization cache keyed by exact input text.
pub struct RemoteEmbedder {
    agent: ureq::Agent,
    url: String,
    model: String,
    credential: String,
    dim: usize,
    cache: Mutex<BTreeMap<String, EmbeddingVector>>,
}

impl RemoteEmbedder {
    /// Reads the credential named in `config` immediately so a missing
    /// variable fails at construction, not at the first call.
    pub fn new(config: &HttpBackendConfig, dim: usize) -> Result<Self, EmbedError> {
        let credential = std::env::var(&config.credential_env)
            .map_err(|_| EmbedError::MissingCredential(config.credential_env.clone()))?;
        let url = config
            .embed_base_url
            .clone()
            .unwrap_or_else(|| config.base_url.clone());
        let model = config
            .embed_model
            .clone()
            .unwrap_or_else(|| config.model.clone());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/embeddings", url.trim_end_matches('/')),
            model,
            credential,
            dim,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    fn fetch(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let body = serde_json::json!({ "model": self.model, "input": [text] });
        let mut last = String::new();
        for attempt in 0..3u32 {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt));
            }
            let sent = self
                .agent
                .post(&self.url)
                .header("authorization", &format!("Bearer {}", self.credential))
                .send_json(&body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status >= 500 || status == 429 {
                last = format!("status {status}");
                continue;
            }
            if status >= 400 {
                return Err(EmbedError::Network {
                    attempts: attempt + 1,
                    detail: format!("status {status}"),
                });
            }
            let parsed: EmbedResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
            let datum = parsed
                .data
                .into_iter()
                .next()
                .ok_or_else(|| EmbedError::MalformedResponse("empty data array".into()))?;
            if datum.embedding.len() != self.dim {
                return Err(EmbedError::MalformedResponse(format!(
                    "expected dim {}, got {}",
                    self.dim,
                    datum.embedding.len()
                )));
            }
            return Ok(EmbeddingVector::unit(datum.embedding));
        }
        Err(EmbedError::Network { attempts: 3, detail: last })
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit.clone());
        }
        let vec = self.fetch(text)?;
        self.cache.lock().unwrap().insert(text.to_string(), vec.clone());
        Ok(vec)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
