//! Completion and embedding providers behind one gateway.
//!
//! The [`Gateway`] owns one completion provider and one embedding provider, an optional
//! content-addressed response cache and a permit pool bounding concurrent provider calls.
//! Callers may invoke it from many threads at once.

mod cache;
mod http;
mod mock;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

pub use cache::ResponseCache;
pub use http::{HttpCompletion, HttpEmbedding};
pub use mock::{mock_embedding_vector, MockCompletion, MockEmbedding, MOCK_EMBEDDING_DIM};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s) (request {digest}): {message}")]
    Retriable { digest: String, attempts: u32, message: String },
    #[error("provider content error (request {digest}): {message}")]
    Content { digest: String, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("response cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_tokens: 4096,
            temperature: 0.0,
        }
    }

    /// SHA-256 over every request field, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_prompt.as_bytes());
        h.update([0u8]);
        h.update(self.user_prompt.as_bytes());
        h.update([0u8]);
        h.update(self.max_tokens.to_le_bytes());
        h.update(self.temperature.to_bits().to_le_bytes());
        hex::encode(h.finalize())
    }

    fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(ProviderError::Argument("prompts must be non-empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::Argument("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::Argument("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fixed-length real vector for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Rejects empty vectors and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::Argument("embedding must have dim >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Argument("embedding has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Standard cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, ProviderError> {
    if a.dim() != b.dim() {
        return Err(ProviderError::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(ProviderError::Argument("cosine of a zero vector".into()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Full cosine matrix between two embedding lists (`rows × cols`, row-major).
pub fn similarity_matrix(
    rows: &[Embedding],
    cols: &[Embedding],
) -> Result<Vec<Vec<f64>>, ProviderError> {
    rows.iter()
        .map(|r| cols.iter().map(|c| cosine_similarity(r, c)).collect())
        .collect()
}

pub trait CompletionProvider: Send + Sync {
    /// Stable identity recorded in provenance and folded into cache keys.
    fn id(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HttpCompletion,
    HttpEmbedding,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. Keys never live in config.
    pub api_key_env: Option<String>,
    /// Header carrying the key; `authorization` sends `Bearer <key>`.
    pub auth_header: String,
    pub model_name: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    /// JSON pointer to the generated text in a completion response.
    pub response_pointer: String,
    /// Canned mock completions: a JSON object mapping request digest to response.
    pub canned_responses: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            api_key_env: None,
            auth_header: "authorization".into(),
            model_name: "mock".into(),
            timeout_secs: 120,
            max_retries: 2,
            parallelism: 4,
            response_pointer: "/content/0/text".into(),
            canned_responses: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.parallelism == 0 {
            return Err(ProviderError::Config("parallelism must be >= 1".into()));
        }
        if self.kind != ProviderKind::Mock && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(ProviderError::Config(format!(
                "{:?} provider requires an endpoint",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// Reads the API key from the configured environment variable, if any.
    pub fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            }),
        }
    }
}

/// Counting semaphore bounding in-flight provider calls.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    completion: Box<dyn CompletionProvider>,
    embedding: Box<dyn EmbeddingProvider>,
    cache: Option<ResponseCache>,
    permits: Permits,
}

impl Gateway {
    pub fn new(
        completion: Box<dyn CompletionProvider>,
        embedding: Box<dyn EmbeddingProvider>,
        parallelism: usize,
    ) -> Self {
        Self { completion, embedding, cache: None, permits: Permits::new(parallelism) }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Offline gateway: mock completion and the hashing mock embedder.
    pub fn mock() -> Self {
        Self::new(Box::new(MockCompletion::new()), Box::new(MockEmbedding), 4)
    }

    /// Builds providers from config. Fails before any call when an HTTP provider's key
    /// variable is missing.
    pub fn from_configs(
        completion: &ProviderConfig,
        embedding: &ProviderConfig,
    ) -> Result<Self, ProviderError> {
        completion.validate()?;
        embedding.validate()?;
        let comp: Box<dyn CompletionProvider> = match completion.kind {
            ProviderKind::Mock => {
                let mut m = MockCompletion::new();
                if let Some(path) = &completion.canned_responses {
                    m = m.with_canned_file(std::path::Path::new(path))?;
                }
                Box::new(m)
            }
            ProviderKind::HttpCompletion => Box::new(HttpCompletion::from_config(completion)?),
            ProviderKind::HttpEmbedding => {
                return Err(ProviderError::Config(
                    "completion provider cannot be of kind http-embedding".into(),
                ))
            }
        };
        let emb: Box<dyn EmbeddingProvider> = match embedding.kind {
            ProviderKind::Mock => Box::new(MockEmbedding),
            ProviderKind::HttpEmbedding => Box::new(HttpEmbedding::from_config(embedding)?),
            ProviderKind::HttpCompletion => {
                return Err(ProviderError::Config(
                    "embedding provider cannot be of kind http-completion".into(),
                ))
            }
        };
        let parallelism = completion.parallelism.min(embedding.parallelism);
        Ok(Self::new(comp, emb, parallelism))
    }

    pub fn completion_id(&self) -> String {
        self.completion.id()
    }

    pub fn embedding_id(&self) -> String {
        self.embedding.id()
    }

    /// Runs a completion, serving repeats from the cache. Returns trimmed, non-empty text.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let digest = req.digest();
        let key = format!("completion:{}:{}", self.completion.id(), digest);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            debug!(digest = %&digest[..12], "completion cache hit");
            return Ok(hit);
        }
        let text = {
            let _permit = self.permits.acquire();
            self.completion.complete(req)?
        };
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(ProviderError::Content { digest, message: "empty completion".into() });
        }
        if let Some(cache) = &self.cache {
            cache.put(&key, &text)?;
        }
        Ok(text)
    }

    /// Embeds every text, order preserved. Cached per text.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::Argument("embed called with no texts".into()));
        }
        let provider_id = self.embedding.id();
        let keys: Vec<String> = texts
            .iter()
            .map(|t| format!("embedding:{provider_id}:{}", text_digest(t)))
            .collect();
        let mut out: Vec<Option<Embedding>> = vec![None; texts.len()];
        let mut missing = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            match self.cache.as_ref().and_then(|c| c.get(key)) {
                Some(hit) => {
                    let values: Vec<f64> = serde_json::from_str(&hit)
                        .map_err(|e| ProviderError::Cache(format!("bad cached embedding: {e}")))?;
                    out[i] = Some(Embedding::new(values)?);
                }
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = {
                let _permit = self.permits.acquire();
                self.embedding.embed(&batch)?
            };
            if fresh.len() != batch.len() {
                return Err(ProviderError::Content {
                    digest: text_digest(&batch.join("\u{0}")),
                    message: format!("expected {} embeddings, got {}", batch.len(), fresh.len()),
                });
            }
            for (&i, e) in missing.iter().zip(fresh) {
                if let Some(cache) = &self.cache {
                    let encoded = serde_json::to_string(e.values())
                        .map_err(|err| ProviderError::Cache(err.to_string()))?;
                    cache.put(&keys[i], &encoded)?;
                }
                out[i] = Some(e);
            }
        }
        let out: Vec<Embedding> = out.into_iter().map(|e| e.expect("filled above")).collect();
        let dim = out[0].dim();
        if out.iter().any(|e| e.dim() != dim) {
            return Err(ProviderError::Content {
                digest: text_digest(&texts.join("\u{0}")),
                message: "provider returned embeddings of mixed dimension".into(),
            });
        }
        Ok(out)
    }
}

fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
