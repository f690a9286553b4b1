//! Text encoders behind a provider interface.
//!
//! [`HashEmbedder`] is the bit-exact reference provider used by every golden
//! test. [`RemoteEmbedder`] talks to an HTTP embedding service and is opt-in.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

/// Dense embedding. Unit L2 norm, or all zeros for an empty token set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Scales to unit norm in place; zero vectors are left untouched.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x /= n;
            }
        }
    }
}

/// Cosine similarity, defined as 0 when either side is the zero vector.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Provider of the query and node encoders. Same text, same vector.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Signed feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vector {
        let mut v = Vector::zeros(self.dim);
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v.0[(h % self.dim as u64) as usize] += sign;
        }
        v.normalize();
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        "reference"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        Ok(self.embed_text(text))
    }
}

/// Wire request for the remote embedding service.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Sends one JSON body and returns the response body.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &str) -> Result<String, EmbedError>;
}

#[derive(Debug, Default, Clone)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &str) -> Result<String, EmbedError> {
        let mut resp = ureq::post(url)
            .content_type("application/json")
            .send(body)
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Transport(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    vector: Vector,
}

/// Client for a remote embedding endpoint with a content-hash cache.
///
/// Transport errors are retried with capped exponential backoff. Failures are
/// surfaced; the client never falls back to the reference provider.
pub struct RemoteEmbedder<T: Transport = HttpTransport> {
    endpoint: String,
    dim: usize,
    transport: T,
    retry: RetryPolicy,
    cache: RwLock<HashMap<u64, Vector>>,
    cache_path: Option<PathBuf>,
}

impl<T: Transport> RemoteEmbedder<T> {
    pub fn new(endpoint: impl Into<String>, dim: usize, transport: T) -> Self {
        Self {
            endpoint: endpoint.into(),
            dim,
            transport,
            retry: RetryPolicy::default(),
            cache: RwLock::new(HashMap::new()),
            cache_path: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Loads (if present) and later persists the cache at `path`.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            let mut cache = self.cache.write().expect("cache lock");
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine =
                    serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                let hash = u64::from_str_radix(&entry.hash, 16)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                if entry.vector.dim() == self.dim {
                    cache.insert(hash, entry.vector);
                }
            }
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn save_cache(&self) -> std::io::Result<()> {
        let Some(path) = &self.cache_path else {
            return Ok(());
        };
        write_cache(path, &self.cache.read().expect("cache lock"))
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        let body = serde_json::to_string(&EmbedRequest { texts: texts.to_vec() })
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        let mut attempt = 0;
        let raw = loop {
            match self.transport.post_json(&self.endpoint, &body) {
                Ok(raw) => break raw,
                Err(EmbedError::Transport(msg)) => {
                    attempt += 1;
                    if attempt >= self.retry.max_attempts {
                        return Err(EmbedError::Transport(msg));
                    }
                    std::thread::sleep(self.retry.delay(attempt - 1));
                }
                Err(other) => return Err(other),
            }
        };
        let resp: EmbedResponse = serde_json::from_str(&raw).map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::BadResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        got: v.len(),
                    })
                } else {
                    Ok(Vector(v))
                }
            })
            .collect()
    }

    /// Embeds a batch, preserving order. Cached texts cost no request and
    /// duplicate texts in one batch are requested once.
    pub fn remote_embed(&self, batch: &[String]) -> Result<Vec<Vector>, EmbedError> {
        let hashes: Vec<u64> = batch.iter().map(|t| fnv1a64(t.as_bytes())).collect();
        let mut pending: Vec<String> = Vec::new();
        let mut pending_hashes: Vec<u64> = Vec::new();
        {
            let cache = self.cache.read().expect("cache lock");
            for (text, h) in batch.iter().zip(&hashes) {
                if !cache.contains_key(h) && !pending_hashes.contains(h) {
                    pending.push(text.clone());
                    pending_hashes.push(*h);
                }
            }
        }
        if !pending.is_empty() {
            let fresh = self.request(&pending)?;
            let mut cache = self.cache.write().expect("cache lock");
            for (h, v) in pending_hashes.into_iter().zip(fresh) {
                cache.entry(h).or_insert(v);
            }
        }
        let cache = self.cache.read().expect("cache lock");
        Ok(hashes.iter().map(|h| cache[h].clone()).collect())
    }
}

fn write_cache(path: &Path, cache: &HashMap<u64, Vector>) -> std::io::Result<()> {
    let mut keys: Vec<_> = cache.keys().copied().collect();
    keys.sort_unstable();
    let mut out = String::new();
    for k in keys {
        let line = CacheLine {
            hash: format!("{k:016x}"),
            vector: cache[&k].clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("cache line serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

impl<T: Transport> Embedder for RemoteEmbedder<T> {
    fn name(&self) -> &str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        Ok(self.remote_embed(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        self.remote_embed(texts)
    }
}
