//! Sentence-embedding providers and cosine similarity.
//!
//! Two providers ship here: [`FallbackEmbedder`], a deterministic hashed
//! bag-of-words used when no model endpoint is configured, and
//! [`HttpEmbedder`], which talks to any external embedding server over the
//! `POST /embed` protocol. Text is passed to the server untruncated; context
//! limits are the server's concern.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ChangeRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding provider failure: {0}")]
    ProviderFailure(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Dense embedding. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::ProviderFailure("non-finite embedding value".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A deterministic text embedder. Implementations must be callable from
/// several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

pub fn embed_change(
    provider: &dyn EmbeddingProvider,
    change: &ChangeRecord,
) -> Result<EmbeddingVector, EmbeddingError> {
    provider.embed(&change.text())
}

/// `u·v / (|u||v|)`, clamped to `[-1, 1]`; zero when either vector is zero.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if u.dimension() != v.dimension() {
        return Err(EmbeddingError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let denom = u.norm() * v.norm();
    if denom == 0.0 || !denom.is_finite() {
        return Ok(0.0);
    }
    let sim = dot / denom;
    if sim.is_nan() {
        return Ok(0.0);
    }
    Ok(sim.clamp(-1.0, 1.0))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub const FALLBACK_DIMENSION: usize = 256;

/// Hashed token-count embedding: each token lands in bucket
/// `fnv1a_64(token) mod D`, then the count vector is L2-normalized.
pub fn fallback_embed(text: &str, dimension: usize) -> EmbeddingVector {
    let mut v = vec![0.0f64; dimension.max(1)];
    let d = v.len() as u64;
    for tok in tokenize(text) {
        v[(fnv1a_64(tok.as_bytes()) % d) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    EmbeddingVector(v)
}

#[derive(Debug, Clone)]
pub struct FallbackEmbedder {
    dimension: usize,
    name: String,
}

impl FallbackEmbedder {
    pub fn new(dimension: usize) -> Self {
        let dimension = dimension.max(1);
        Self {
            dimension,
            name: format!("fallback-fnv1a-{dimension}"),
        }
    }
}

impl Default for FallbackEmbedder {
    fn default() -> Self {
        Self::new(FALLBACK_DIMENSION)
    }
}

impl EmbeddingProvider for FallbackEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(fallback_embed(text, self.dimension))
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dimension: usize,
}

/// Validates an `/embed` response body against the number of texts sent.
pub fn decode_embed_response(
    body: &[u8],
    expected_count: usize,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let resp: EmbedResponse = serde_json::from_slice(body)
        .map_err(|e| EmbeddingError::ProviderFailure(format!("undecodable response: {e}")))?;
    if resp.dimension == 0 {
        return Err(EmbeddingError::ProviderFailure("dimension 0".into()));
    }
    if resp.vectors.len() != expected_count {
        return Err(EmbeddingError::ProviderFailure(format!(
            "expected {expected_count} vectors, got {}",
            resp.vectors.len()
        )));
    }
    resp.vectors
        .into_iter()
        .map(|v| {
            if v.len() != resp.dimension {
                return Err(EmbeddingError::DimensionMismatch(v.len(), resp.dimension));
            }
            EmbeddingVector::new(v)
        })
        .collect()
}

/// Client for an external embedding server.
pub struct HttpEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
    dimension: usize,
    name: String,
}

impl HttpEmbedder {
    /// Connects to `{base_url}/embed` and probes it once to learn the
    /// dimension. Must not be called from inside an async runtime.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, EmbeddingError> {
        let base = base_url.trim_end_matches('/');
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::ProviderFailure(e.to_string()))?;
        let mut this = Self {
            endpoint: format!("{base}/embed"),
            client,
            dimension: 0,
            name: format!("http:{base}"),
        };
        let probe = this.embed_batch(&["\n"])?;
        this.dimension = probe[0].dimension();
        Ok(this)
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbeddingError::ProviderFailure(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::ProviderFailure(format!("embed server returned {status}")));
        }
        let body = resp
            .bytes()
            .map_err(|e| EmbeddingError::ProviderFailure(e.without_url().to_string()))?;
        let vectors = decode_embed_response(&body, texts.len())?;
        if self.dimension != 0 {
            if let Some(v) = vectors.iter().find(|v| v.dimension() != self.dimension) {
                return Err(EmbeddingError::DimensionMismatch(v.dimension(), self.dimension));
            }
        }
        Ok(vectors)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.remove(0))
    }
}

type CacheKey = (String, [u8; 32]);

/// Text-keyed embedding cache shared across requests.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<CacheKey, EmbeddingVector>>,
    misses: AtomicU64,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(provider: &dyn EmbeddingProvider, text: &str) -> CacheKey {
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        (provider.name().to_owned(), digest)
    }

    pub fn get_or_embed(
        &self,
        provider: &dyn EmbeddingProvider,
        change: &ChangeRecord,
    ) -> Result<EmbeddingVector, EmbeddingError> {
        let text = change.text();
        let key = Self::key(provider, &text);
        if let Some(v) = self.entries.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = provider.embed(&text)?;
        let mut w = self.entries.write().unwrap_or_else(|e| e.into_inner());
        // another thread may have raced us; keep the first value so every
        // caller sees bit-identical vectors
        Ok(w.entry(key).or_insert(v).clone())
    }

    pub fn clear(&self) {
        self.entries.write().unwrap_or_else(|e| e.into_inner()).clear();
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

pub fn cached_embed(
    provider: &dyn EmbeddingProvider,
    change: &ChangeRecord,
    cache: &EmbeddingCache,
) -> Result<EmbeddingVector, EmbeddingError> {
    cache.get_or_embed(provider, change)
}
