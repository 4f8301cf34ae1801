//! Token-level text embeddings, mean pooling and cosine geometry.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{post_with_retry, CallError, RetryPolicy, Transport};

/// Norm below which a vector is treated as zero by [`cosine`].
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text exceeds the encoder context length")]
    TextTooLong,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed embedding: {0}")]
    Invalid(String),
}

/// Per-token encoder outputs, `L x dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    tokens: Vec<String>,
    matrix: Vec<f64>,
    dim: usize,
}

impl TokenEmbeddings {
    pub fn new(tokens: Vec<String>, matrix: Vec<f64>, dim: usize) -> Result<Self, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::Invalid("no tokens".into()));
        }
        if dim == 0 {
            return Err(EmbedError::Invalid("zero embedding width".into()));
        }
        if matrix.len() != tokens.len() * dim {
            return Err(EmbedError::Invalid(format!(
                "{} values for {} tokens of width {dim}",
                matrix.len(),
                tokens.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Invalid("non-finite entry".into()));
        }
        Ok(Self {
            tokens,
            matrix,
            dim,
        })
    }

    pub fn from_rows(tokens: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, EmbedError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EmbedError::Invalid("ragged rows".into()));
        }
        Self::new(tokens, rows.concat(), dim)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks_exact(self.dim)
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            tokens: self.tokens.clone(),
            matrix: self.matrix.iter().map(|v| v * c).collect(),
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding(pub Vec<f64>);

impl PooledEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &PooledEmbedding) -> PooledEmbedding {
        PooledEmbedding(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Mean over tokens.
pub fn pool(e: &TokenEmbeddings) -> PooledEmbedding {
    let mut acc = vec![0.0; e.dim];
    for row in e.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / e.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    PooledEmbedding(acc)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either norm is below [`ZERO_NORM_EPS`].
pub fn cosine(a: &PooledEmbedding, b: &PooledEmbedding) -> f64 {
    cosine_slices(&a.0, &b.0)
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub trait EmbeddingBackend: Send + Sync {
    /// Stable name used as part of cache keys.
    fn identity(&self) -> String;

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddings>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddings>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Deterministic offline backend.
///
/// Tokens are whitespace-separated words, lowercased with surrounding
/// punctuation trimmed. Each token maps to a pseudo-random unit vector keyed
/// by `(seed, token)` through SHA-256 and ChaCha8, so results are identical
/// across processes and platforms.
#[derive(Debug, Clone)]
pub struct MockEmbeddingBackend {
    seed: u64,
    dim: usize,
}

impl MockEmbeddingBackend {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: Self::DEFAULT_DIM,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        let words = crate::text::words(text);
        if words.is_empty() {
            text.split_whitespace().map(str::to_lowercase).collect()
        } else {
            words
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(b"npc-mock-embed/v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > ZERO_NORM_EPS {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbeddingBackend for MockEmbeddingBackend {
    fn identity(&self) -> String {
        format!("mock:seed={}:dim={}", self.seed, self.dim)
    }

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = Self::tokenize(text);
        let matrix = tokens.iter().flat_map(|t| self.token_vector(t)).collect();
        TokenEmbeddings::new(tokens, matrix, self.dim)
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    tokens: Option<Vec<Vec<String>>>,
}

/// Client for a `POST /embed` service returning token-level embeddings.
pub struct RemoteEmbeddingBackend {
    url: String,
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    timeout: Duration,
}

impl RemoteEmbeddingBackend {
    /// `base_url` is the service root; requests go to `{base_url}/embed`.
    pub fn new(base_url: &str, transport: Arc<dyn Transport>) -> Self {
        Self {
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            transport,
            policy: RetryPolicy::new(2),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl EmbeddingBackend for RemoteEmbeddingBackend {
    fn identity(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddings>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let body = serde_json::to_vec(&EmbedRequest { texts }).expect("request serializes");
        let resp = post_with_retry(
            self.transport.as_ref(),
            &self.url,
            &body,
            None,
            self.timeout,
            self.policy,
        )
        .map_err(|e| match e {
            CallError::Status { status: 413, .. } => EmbedError::TextTooLong,
            CallError::Status {
                status: 400,
                ref body,
            } if body.contains("TEXT_TOO_LONG") => EmbedError::TextTooLong,
            CallError::Status { status: 400, .. } => EmbedError::EmptyText,
            other => EmbedError::BackendUnavailable(other.to_string()),
        })?;
        let parsed: EmbedResponse = serde_json::from_slice(&resp.body)
            .map_err(|e| EmbedError::Invalid(format!("bad /embed response: {e}")))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(EmbedError::Invalid(format!(
                "{} embeddings for {} texts",
                parsed.embeddings.len(),
                texts.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .enumerate()
            .map(|(i, rows)| {
                let tokens = parsed
                    .tokens
                    .as_ref()
                    .and_then(|t| t.get(i).cloned())
                    .filter(|t| t.len() == rows.len())
                    .unwrap_or_else(|| (0..rows.len()).map(|j| format!("<{j}>")).collect());
                if rows.iter().any(|r| r.len() != parsed.dim) {
                    return Err(EmbedError::Invalid("row width differs from dim".into()));
                }
                TokenEmbeddings::from_rows(tokens, &rows)
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key_hash: String,
    dim: usize,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

/// Memoizes another backend, keyed by `(backend identity, text)`.
pub struct CachedBackend<B> {
    inner: B,
    identity: String,
    entries: RwLock<HashMap<String, Arc<TokenEmbeddings>>>,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        let identity = inner.identity();
        Self {
            inner,
            identity,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn key_hash(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.identity.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Merge entries from a line-delimited cache file. Existing entries win.
    pub fn load(&self, path: &Path) -> std::io::Result<usize> {
        let file = File::open(path)?;
        let mut added = 0;
        let mut map = self.entries.write().unwrap_or_else(|e| e.into_inner());
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheLine = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let tokens = entry
                .tokens
                .unwrap_or_else(|| (0..entry.rows.len()).map(|j| format!("<{j}>")).collect());
            let emb = TokenEmbeddings::from_rows(tokens, &entry.rows)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            if emb.dim() != entry.dim {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    "cache row width differs from dim",
                ));
            }
            if let Entry::Vacant(slot) = map.entry(entry.key_hash) {
                slot.insert(Arc::new(emb));
                added += 1;
            }
        }
        Ok(added)
    }

    /// Write all entries sorted by key.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let map = self.entries.read().unwrap_or_else(|e| e.into_inner());
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut w = BufWriter::new(File::create(path)?);
        for key in keys {
            let emb = &map[key];
            let line = CacheLine {
                key_hash: key.clone(),
                dim: emb.dim(),
                rows: emb.rows().map(<[f64]>::to_vec).collect(),
                tokens: Some(emb.tokens().to_vec()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn embed(&self, text: &str) -> Result<TokenEmbeddings, EmbedError> {
        let key = self.key_hash(text);
        if let Some(hit) = self
            .entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return Ok(hit.as_ref().clone());
        }
        let fresh = self.inner.embed(text)?;
        let mut map = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let stored = map.entry(key).or_insert_with(|| Arc::new(fresh));
        Ok(stored.as_ref().clone())
    }
}
