//! Dense text embeddings from a remote endpoint or a deterministic offline
//! mock, with a persistent on-disk cache.
//!
//! The mock backend derives each vector from a seeded hash of the text, so
//! embeddings are a pure function of `(text, dim, seed)`: stable across runs,
//! processes, and machines. The cache stores rows keyed by a content hash and
//! is consulted before any backend call.

use crate::parallel::{self, ExecMode, Semaphore};
use crate::vecstore::EmbeddingMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Env var holding the bearer token for the remote embedding endpoint.
pub const EMBED_API_KEY_VAR: &str = "CONCEPT_EMBED_API_KEY";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embed_batch requires a nonempty input")]
    EmptyBatch,
    #[error("vectors have mismatched dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("endpoint returned dimension {got}, cache/config expects {want}")]
    CacheDimensionMismatch { got: usize, want: usize },
    #[error("embedding endpoint failed after {attempts} attempts: {msg}")]
    Endpoint { attempts: u32, msg: String },
    #[error("embedding response malformed: {0}")]
    BadResponse(String),
    #[error(transparent)]
    VecStore(#[from] crate::vecstore::VecStoreError),
}

/// Similarity metric used throughout retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Dot,
}

/// Similarity between two equal-dimension vectors, computed in f64.
///
/// Cosine with a zero vector on either side is 0 by convention so degenerate
/// texts never poison a batch.
pub fn similarity(a: &[f32], b: &[f32], metric: Metric) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    match metric {
        Metric::Dot => Ok(dot),
        Metric::Cosine => {
            let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                Ok(0.0)
            } else {
                Ok(dot / (na * nb))
            }
        }
    }
}

/// Provider settings. `endpoint = "mock"` selects the offline backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub metric: Metric,
    /// Directory for the `emb.f32` / `emb.manifest.json` cache; `None`
    /// disables caching.
    pub cache_path: Option<PathBuf>,
    /// Vector dimension. Authoritative for the mock backend; remote
    /// responses are validated against it.
    pub dim: usize,
    /// Seed folded into every mock vector.
    pub seed: u64,
    /// Max texts per backend request.
    pub batch_size: usize,
    /// Bound on concurrently in-flight backend requests.
    pub max_inflight: usize,
    /// Transport retries for remote calls.
    pub retries: u32,
    /// Initial retry backoff in milliseconds (doubles per attempt).
    pub backoff_ms: u64,
}

impl ProviderConfig {
    pub fn mock(dim: usize, seed: u64) -> Self {
        Self {
            endpoint: "mock".into(),
            model: "mock-embed".into(),
            metric: Metric::Cosine,
            cache_path: None,
            dim,
            seed,
            batch_size: 64,
            max_inflight: 4,
            retries: 3,
            backoff_ms: 500,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }
}

struct CacheState {
    matrix: EmbeddingMatrix,
}

/// Embedding provider with cache and call accounting.
pub struct Embedder {
    cfg: ProviderConfig,
    cache: Mutex<Option<CacheState>>,
    backend_calls: AtomicU64,
    inflight: Semaphore,
    http: Option<reqwest::blocking::Client>,
}

#[derive(Serialize)]
struct EmbedRequestBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponseBody {
    data: Vec<EmbedResponseRow>,
}

#[derive(Deserialize)]
struct EmbedResponseRow {
    embedding: Vec<f32>,
}

impl Embedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self, EmbedError> {
        let cache = match &cfg.cache_path {
            Some(dir) if EmbeddingMatrix::exists(dir, "emb") => {
                let matrix = EmbeddingMatrix::load(dir, "emb")?;
                if matrix.dim() != cfg.dim {
                    return Err(EmbedError::CacheDimensionMismatch {
                        got: matrix.dim(),
                        want: cfg.dim,
                    });
                }
                Some(CacheState { matrix })
            }
            Some(_) => Some(CacheState {
                matrix: EmbeddingMatrix::new(cfg.dim),
            }),
            None => None,
        };
        let http = if cfg.is_mock() {
            None
        } else {
            Some(
                reqwest::blocking::Client::builder()
                    .timeout(std::time::Duration::from_secs(60))
                    .build()
                    .map_err(|e| EmbedError::Endpoint {
                        attempts: 0,
                        msg: e.to_string(),
                    })?,
            )
        };
        Ok(Self {
            inflight: Semaphore::new(cfg.max_inflight),
            cfg,
            cache: Mutex::new(cache),
            backend_calls: AtomicU64::new(0),
            http,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn metric(&self) -> Metric {
        self.cfg.metric
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Number of backend requests issued so far (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Cache key for a text. The key pins the full vector-space identity
    /// (model, dim, seed) so a reseeded mock or a reconfigured model can
    /// never resurface stale rows.
    fn content_hash(&self, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.cfg.model.as_bytes());
        hasher.update([0x1f]);
        hasher.update((self.cfg.dim as u64).to_le_bytes());
        hasher.update(self.cfg.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write;
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    /// Embed one text (no batching convenience).
    pub fn embed_one(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed_batch(std::slice::from_ref(&text.to_string()))?.remove(0))
    }

    /// Embed a batch, order-preserving, one row per input (duplicates get
    /// duplicate rows). The cache is consulted first and written after.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyBatch);
        }
        let hashes: Vec<String> = texts.iter().map(|t| self.content_hash(t)).collect();
        let mut rows: Vec<Option<Vec<f32>>> = vec![None; texts.len()];

        {
            let cache = self.cache.lock().expect("cache lock");
            if let Some(state) = cache.as_ref() {
                for (i, h) in hashes.iter().enumerate() {
                    if let Some(row) = state.matrix.row(h) {
                        rows[i] = Some(row.to_vec());
                    }
                }
            }
        }

        // Positions still missing, deduplicated by hash so each distinct text
        // is fetched once per batch.
        let mut misses: Vec<usize> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            if row.is_none() && seen.insert(hashes[i].clone()) {
                misses.push(i);
            }
        }

        if !misses.is_empty() {
            let miss_texts: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            let chunks: Vec<&[String]> = miss_texts.chunks(self.cfg.batch_size.max(1)).collect();
            let fetched: Vec<Result<Vec<Vec<f32>>, EmbedError>> =
                parallel::map_collect(ExecMode::Parallel, &chunks, |chunk| {
                    let _permit = self.inflight.acquire();
                    self.backend_calls.fetch_add(1, Ordering::SeqCst);
                    if self.cfg.is_mock() {
                        Ok(chunk
                            .iter()
                            .map(|t| mock_vector(t, self.cfg.dim, self.cfg.seed))
                            .collect())
                    } else {
                        self.fetch_remote(chunk)
                    }
                });
            let mut new_rows: Vec<Vec<f32>> = Vec::with_capacity(miss_texts.len());
            for res in fetched {
                new_rows.extend(res?);
            }
            {
                let mut cache = self.cache.lock().expect("cache lock");
                if let Some(state) = cache.as_mut() {
                    for (k, &_i) in misses.iter().enumerate() {
                        let h = self.content_hash(&miss_texts[k]);
                        if state.matrix.row(&h).is_none() {
                            state.matrix.push(h, new_rows[k].clone())?;
                        }
                    }
                    if let Some(dir) = &self.cfg.cache_path {
                        state.matrix.save(dir, "emb")?;
                    }
                }
            }
            let by_hash: std::collections::HashMap<&str, &Vec<f32>> = misses
                .iter()
                .enumerate()
                .map(|(k, &i)| (hashes[i].as_str(), &new_rows[k]))
                .collect();
            for (i, row) in rows.iter_mut().enumerate() {
                if row.is_none() {
                    *row = Some((*by_hash[hashes[i].as_str()]).clone());
                }
            }
        }

        Ok(rows.into_iter().map(|r| r.expect("all rows resolved")).collect())
    }

    /// Embed texts and assemble a named matrix (ids must be unique).
    pub fn embed_matrix(&self, ids: &[String], texts: &[String]) -> Result<EmbeddingMatrix, EmbedError> {
        let rows = self.embed_batch(texts)?;
        let mut matrix = EmbeddingMatrix::new(self.cfg.dim);
        for (id, row) in ids.iter().zip(rows) {
            matrix.push(id.clone(), row)?;
        }
        Ok(matrix)
    }

    fn fetch_remote(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let client = self.http.as_ref().expect("http client in remote mode");
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let body = EmbedRequestBody {
            model: &self.cfg.model,
            input: texts,
        };
        let mut last_err = String::new();
        let mut delay = self.cfg.backoff_ms;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
            }
            let mut req = client.post(&url).json(&body);
            if let Ok(key) = std::env::var(EMBED_API_KEY_VAR) {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: EmbedResponseBody = resp
                        .json()
                        .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
                    if parsed.data.len() != texts.len() {
                        return Err(EmbedError::BadResponse(format!(
                            "{} rows for {} inputs",
                            parsed.data.len(),
                            texts.len()
                        )));
                    }
                    let rows: Vec<Vec<f32>> =
                        parsed.data.into_iter().map(|r| r.embedding).collect();
                    for row in &rows {
                        if row.len() != self.cfg.dim {
                            return Err(EmbedError::CacheDimensionMismatch {
                                got: row.len(),
                                want: self.cfg.dim,
                            });
                        }
                    }
                    return Ok(rows);
                }
                Ok(resp) => {
                    last_err = format!("HTTP {}", resp.status());
                }
                Err(e) => {
                    last_err = e.to_string();
                }
            }
        }
        Err(EmbedError::Endpoint {
            attempts: self.cfg.retries + 1,
            msg: last_err,
        })
    }
}

/// Deterministic mock embedding: seed a ChaCha stream with a 64-bit hash of
/// `(seed, text)`, draw `dim` standard normals, L2-normalize.
pub fn mock_vector(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let h = u64::from_le_bytes(digest[..8].try_into().expect("sha256 >= 8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let mut v: Vec<f32> = (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x as f32
        })
        .collect();
    let norm: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
    }
    v
}
