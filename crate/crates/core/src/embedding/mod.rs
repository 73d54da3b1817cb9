//! Sentence-embedding providers.
//!
//! [`Embedder`] is the provider handle used everywhere downstream. It owns one
//! backend (hash, precomputed file, or remote service), maps empty texts to the
//! zero vector without consulting the backend, and optionally caches results.

mod file;
mod hash;
mod remote;
mod server;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::Mutex;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{load_vector_file, write_vector_file};
pub use hash::{token_bucket, tokenize, HashBackend, DEFAULT_HASH_DIM};
pub use remote::RemoteBackend;
pub use server::EmbedServer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding transport error for texts {first}..{end}: {message}")]
    Transport {
        first: usize,
        end: usize,
        message: String,
    },
    #[error("malformed embedding response at text {index}: {message}")]
    Format { index: usize, message: String },
    #[error("unknown text ({} missing): {}", texts.len(), texts.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(", "))]
    UnknownText { texts: Vec<String> },
    #[error("embedding provider configuration: {0}")]
    Config(String),
}

impl EmbeddingError {
    /// Maps indices of a sub-batch back to positions in the caller's batch.
    fn remap(self, positions: &[usize]) -> Self {
        let map = |i: usize| positions.get(i).copied().unwrap_or(i);
        match self {
            EmbeddingError::Transport {
                first,
                end,
                message,
            } => EmbeddingError::Transport {
                first: map(first),
                end: if end == 0 { 0 } else { map(end - 1) + 1 },
                message,
            },
            EmbeddingError::Format { index, message } => EmbeddingError::Format {
                index: map(index),
                message,
            },
            other => other,
        }
    }
}

/// Fixed-dimension real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Config(
                "embedding dimension must be positive".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Config(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderKind {
    Hash { dim: usize, seed: u64 },
    File { path: PathBuf },
    Remote { endpoint: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub cache_capacity: usize,
}

impl ProviderConfig {
    pub fn hash(dim: usize) -> Self {
        Self {
            kind: ProviderKind::Hash { dim, seed: 0 },
            cache_capacity: 0,
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::File { path: path.into() },
            cache_capacity: 0,
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote {
                endpoint: endpoint.into(),
            },
            cache_capacity: 4096,
        }
    }

    pub fn with_cache(mut self, capacity: usize) -> Self {
        self.cache_capacity = capacity;
        self
    }

    /// Short name used in grid keys and tables.
    pub fn name(&self) -> &'static str {
        match self.kind {
            ProviderKind::Hash { .. } => "hash",
            ProviderKind::File { .. } => "file",
            ProviderKind::Remote { .. } => "remote",
        }
    }
}

/// Raw embedding source. Never sees empty texts.
pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// Provider handle: backend + empty-text rule + optional LRU cache.
pub struct Embedder {
    config: ProviderConfig,
    backend: Box<dyn EmbeddingBackend>,
    cache: Option<Mutex<LruCache<String, EmbeddingVector>>>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("config", &self.config)
            .field("dim", &self.backend.dim())
            .finish()
    }
}

impl Embedder {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, EmbeddingError> {
        let backend: Box<dyn EmbeddingBackend> = match &config.kind {
            ProviderKind::Hash { dim, seed } => Box::new(HashBackend::new(*dim, *seed)?),
            ProviderKind::File { path } => Box::new(load_vector_file(path)?),
            ProviderKind::Remote { endpoint } => Box::new(RemoteBackend::connect(endpoint)?),
        };
        Ok(Self::with_backend(config.clone(), backend))
    }

    pub fn with_backend(config: ProviderConfig, backend: Box<dyn EmbeddingBackend>) -> Self {
        let cache = NonZeroUsize::new(config.cache_capacity).map(|c| Mutex::new(LruCache::new(c)));
        Self {
            config,
            backend,
            cache,
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    /// Embeds all texts; the backend is called at most once for the uncached ones.
    pub fn embed_batch<S: AsRef<str>>(
        &self,
        texts: &[S],
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let dim = self.dim();
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut pending: Vec<&str> = Vec::new();
        let mut positions: Vec<usize> = Vec::new();

        {
            let mut cache = self.cache.as_ref().map(|c| c.lock().expect("cache lock"));
            for (i, t) in texts.iter().enumerate() {
                let t = t.as_ref().trim();
                if t.is_empty() {
                    out[i] = Some(EmbeddingVector::zeros(dim));
                } else if let Some(hit) = cache.as_mut().and_then(|c| c.get(t)) {
                    out[i] = Some(hit.clone());
                } else {
                    pending.push(t);
                    positions.push(i);
                }
            }
        }

        if !pending.is_empty() {
            let fresh = self
                .backend
                .embed_texts(&pending)
                .map_err(|e| e.remap(&positions))?;
            if fresh.len() != pending.len() {
                return Err(EmbeddingError::Format {
                    index: positions[fresh.len().min(pending.len() - 1)],
                    message: format!("expected {} embeddings, got {}", pending.len(), fresh.len()),
                });
            }
            let mut cache = self.cache.as_ref().map(|c| c.lock().expect("cache lock"));
            for ((v, &pos), text) in fresh.into_iter().zip(&positions).zip(&pending) {
                if v.dim() != dim {
                    return Err(EmbeddingError::Format {
                        index: pos,
                        message: format!("expected dimension {dim}, got {}", v.dim()),
                    });
                }
                if let Some(c) = cache.as_mut() {
                    c.put(text.to_string(), v.clone());
                }
                out[pos] = Some(v);
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every slot filled"))
            .collect())
    }
}

/// Convenience: embed a single text with `provider`.
pub fn embed(provider: &Embedder, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
    provider.embed(text)
}

pub fn embed_batch<S: AsRef<str>>(
    provider: &Embedder,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    provider.embed_batch(texts)
}
