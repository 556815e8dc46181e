//! Provider abstraction over the three neural dependencies: joint
//! audio-text embedder, text-queried source separator, and caption
//! decomposer.
//!
//! [`Provider`] is the shared handle scoring code talks to. It wraps a
//! backend (remote HTTP or deterministic in-process stub) with a persistent
//! embedding cache, bounded in-flight concurrency, and retry-with-backoff
//! on retryable errors. Cached and uncached paths return bitwise-identical
//! vectors.

pub mod cache;
pub mod remote;
pub mod stub;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::AudioClip;
use crate::event_text::{EventList, EventTextError};
use cache::EmbedCache;

/// Default embedding dimension of the stub embedder.
pub const DEFAULT_EMBED_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch item {index} is empty")]
    EmptyItem { index: usize },
    #[error("endpoint {url} unreachable: {message}")]
    Unreachable { url: String, message: String },
    #[error("request to {url} timed out after {seconds}s")]
    Timeout { url: String, seconds: f64 },
    #[error("remote returned status {status}: {message}")]
    RemoteStatus {
        status: u16,
        message: String,
        retryable: bool,
    },
    #[error("remote returned {got} vectors, expected {expected}")]
    WrongCount { expected: usize, got: usize },
    #[error("embedding dimension {got} does not match session dimension {expected}")]
    WrongDimension { expected: usize, got: usize },
    #[error("invalid {context} response: {message}")]
    InvalidResponse {
        context: &'static str,
        message: String,
    },
    #[error("invalid event list from decomposition: {0}")]
    Decompose(#[from] EventTextError),
    #[error("embeddings must be unit-normalized before similarity")]
    NotNormalized,
    #[error("embedding cache I/O: {0}")]
    Cache(#[from] std::io::Error),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    /// Transient errors worth retrying: transport failures, timeouts,
    /// HTTP 429/5xx.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Unreachable { .. }
                | ProviderError::Timeout { .. }
                | ProviderError::RemoteStatus {
                    retryable: true,
                    ..
                }
        )
    }
}

/// A point in the joint audio-text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub unit_norm: bool,
}

impl EmbeddingVector {
    /// Build from raw values, L2-normalizing in f64.
    pub fn normalized(values: Vec<f32>) -> Result<Self, ProviderError> {
        let norm: f64 = values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(ProviderError::InvalidResponse {
                context: "embedding",
                message: "vector has zero or non-finite norm".into(),
            });
        }
        let values = values.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Ok(Self {
            values,
            unit_norm: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity of two unit-normalized embeddings (their dot
/// product), accumulated in f64 and clamped to [-1, 1].
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ProviderError> {
    if a.dim() != b.dim() {
        return Err(ProviderError::WrongDimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if !a.unit_norm || !b.unit_norm {
        return Err(ProviderError::NotNormalized);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Stub,
}

/// Provider wiring: backend kind plus cache, concurrency and retry knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
    /// Sleep schedule between retry attempts; length = max retries.
    #[serde(default = "default_retry_backoff_s")]
    pub retry_backoff_s: Vec<f64>,
}

fn default_timeout_s() -> f64 {
    30.0
}
fn default_max_in_flight() -> usize {
    4
}
fn default_retry_backoff_s() -> Vec<f64> {
    vec![0.5, 1.0]
}

impl ProviderConfig {
    pub fn stub() -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint_url: None,
            timeout_s: default_timeout_s(),
            max_in_flight: default_max_in_flight(),
            cache_dir: None,
            bearer_token: None,
            retry_backoff_s: default_retry_backoff_s(),
        }
    }

    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            ..Self::stub()
        }
    }

    fn validate(&self) -> Result<(), ProviderError> {
        if self.kind == ProviderKind::Remote && self.endpoint_url.is_none() {
            return Err(ProviderError::Config(
                "remote provider requires endpoint_url".into(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(ProviderError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Backend contract implemented by the stub and the remote HTTP client.
///
/// Backends are free of caching/retry concerns; [`Provider`] layers those.
pub trait ProviderBackend: Send + Sync {
    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn embed_audio(&self, clips: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn separate(&self, clip: &AudioClip, event_caption: &str) -> Result<AudioClip, ProviderError>;
    fn decompose(&self, caption: &str) -> Result<EventList, ProviderError>;
}

/// Counting semaphore bounding concurrent backend calls.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut p = self.sem.permits.lock().expect("semaphore poisoned");
        *p += 1;
        self.sem.cv.notify_one();
    }
}

/// Shared provider handle: backend + embedding cache + in-flight bound +
/// retry. Safe to share across concurrent scoring tasks.
pub struct Provider {
    backend: Arc<dyn ProviderBackend>,
    cache: Option<EmbedCache>,
    limiter: Semaphore,
    backoff: Vec<Duration>,
    session_dim: Mutex<Option<usize>>,
}

impl Provider {
    /// Build from config: `Stub` uses the default test lexicon, `Remote`
    /// the HTTP backend at `endpoint_url`.
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let backend: Arc<dyn ProviderBackend> = match config.kind {
            ProviderKind::Stub => Arc::new(stub::StubProvider::with_default_lexicon()),
            ProviderKind::Remote => Arc::new(remote::RemoteProvider::new(
                config.endpoint_url.clone().expect("validated"),
                config.timeout_s,
                config.bearer_token.clone(),
            )?),
        };
        Self::with_backend(backend, config)
    }

    /// Wrap an explicit backend (custom stub lexicons, test doubles).
    pub fn with_backend(
        backend: Arc<dyn ProviderBackend>,
        config: ProviderConfig,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        let cache = config
            .cache_dir
            .as_ref()
            .map(EmbedCache::new)
            .transpose()?;
        Ok(Self {
            backend,
            cache,
            limiter: Semaphore::new(config.max_in_flight),
            backoff: config
                .retry_backoff_s
                .iter()
                .map(|&s| Duration::from_secs_f64(s.max(0.0)))
                .collect(),
            session_dim: Mutex::new(None),
        })
    }

    /// Embed texts, order-preserving, one unit vector per input.
    pub fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        for (index, t) in texts.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(ProviderError::EmptyItem { index });
            }
        }
        let backend = Arc::clone(&self.backend);
        self.embed_with_cache(texts, hash_text, move |misses| backend.embed_text(misses))
    }

    /// Embed clips, order-preserving, keyed by clip content hash.
    pub fn embed_audio(&self, clips: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        for (index, c) in clips.iter().enumerate() {
            if c.samples.is_empty() {
                return Err(ProviderError::EmptyItem { index });
            }
        }
        let backend = Arc::clone(&self.backend);
        self.embed_with_cache(clips, hash_audio, move |misses| backend.embed_audio(misses))
    }

    /// Separate the stem matching one event caption out of a mixture.
    pub fn separate(
        &self,
        clip: &AudioClip,
        event_caption: &str,
    ) -> Result<AudioClip, ProviderError> {
        if clip.samples.is_empty() {
            return Err(ProviderError::EmptyItem { index: 0 });
        }
        if event_caption.trim().is_empty() {
            return Err(ProviderError::EmptyItem { index: 0 });
        }
        self.retrying(|| {
            let _permit = self.limiter.acquire();
            self.backend.separate(clip, event_caption)
        })
    }

    /// Decompose a caption into an ordered event list.
    pub fn decompose(&self, caption: &str) -> Result<EventList, ProviderError> {
        self.retrying(|| {
            let _permit = self.limiter.acquire();
            self.backend.decompose(caption)
        })
    }

    fn embed_with_cache<T: Clone>(
        &self,
        items: &[T],
        hash_item: impl Fn(&T) -> [u8; 32],
        backend_call: impl Fn(&[T]) -> Result<Vec<EmbeddingVector>, ProviderError>,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if items.is_empty() {
            return Err(ProviderError::EmptyBatch);
        }
        let keys: Vec<[u8; 32]> = items.iter().map(&hash_item).collect();
        let mut resolved: HashMap<[u8; 32], EmbeddingVector> = HashMap::new();

        if let Some(cache) = &self.cache {
            for key in &keys {
                if !resolved.contains_key(key) {
                    if let Some(v) = cache.read(key) {
                        self.check_dim(v.dim())?;
                        resolved.insert(*key, v);
                    }
                }
            }
        }

        let mut miss_keys: Vec<[u8; 32]> = Vec::new();
        let mut miss_items: Vec<T> = Vec::new();
        for (item, key) in items.iter().zip(keys.iter()) {
            if !resolved.contains_key(key) && !miss_keys.contains(key) {
                miss_keys.push(*key);
                miss_items.push(item.clone());
            }
        }

        if !miss_items.is_empty() {
            let vectors = self.retrying(|| {
                let _permit = self.limiter.acquire();
                backend_call(&miss_items)
            })?;
            if vectors.len() != miss_items.len() {
                return Err(ProviderError::WrongCount {
                    expected: miss_items.len(),
                    got: vectors.len(),
                });
            }
            for (key, vector) in miss_keys.into_iter().zip(vectors) {
                let vector = if vector.unit_norm {
                    vector
                } else {
                    EmbeddingVector::normalized(vector.values)?
                };
                self.check_dim(vector.dim())?;
                if let Some(cache) = &self.cache {
                    cache.write(&key, &vector)?;
                }
                resolved.insert(key, vector);
            }
        }

        Ok(keys.iter().map(|k| resolved[k].clone()).collect())
    }

    fn check_dim(&self, dim: usize) -> Result<(), ProviderError> {
        let mut session = self.session_dim.lock().expect("dim lock poisoned");
        match *session {
            None => {
                *session = Some(dim);
                Ok(())
            }
            Some(expected) if expected == dim => Ok(()),
            Some(expected) => Err(ProviderError::WrongDimension { expected, got: dim }),
        }
    }

    fn retrying<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < self.backoff.len() => {
                    std::thread::sleep(self.backoff[attempt]);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Content hash of a text item (keys the embedding cache).
pub fn hash_text(text: &String) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"t2a-eval:text\0");
    h.update(text.as_bytes());
    h.finalize().into()
}

/// Content hash of an audio item: sample rate plus raw f32 samples.
pub fn hash_audio(clip: &AudioClip) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"t2a-eval:audio\0");
    h.update(clip.sample_rate.to_le_bytes());
    for s in &clip.samples {
        h.update(s.to_le_bytes());
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn similarity_identity_antipode_orthogonal() {
        let v = EmbeddingVector::normalized(vec![0.3, -0.4, 0.5, 0.1]).unwrap();
        assert!((similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);

        let neg = EmbeddingVector {
            values: v.values.iter().map(|x| -x).collect(),
            unit_norm: true,
        };
        assert!((similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-6);

        let e0 = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let e1 = EmbeddingVector::normalized(vec![0.0, 1.0]).unwrap();
        assert_eq!(similarity(&e0, &e1).unwrap(), 0.0);
    }

    #[test]
    fn similarity_rejects_mismatch() {
        let a = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::normalized(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            similarity(&a, &b),
            Err(ProviderError::WrongDimension { .. })
        ));
        let raw = EmbeddingVector {
            values: vec![1.0, 1.0],
            unit_norm: false,
        };
        assert!(matches!(
            similarity(&a, &raw),
            Err(ProviderError::NotNormalized)
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::stub();
        cfg.max_in_flight = 0;
        assert!(Provider::new(cfg).is_err());

        let mut cfg = ProviderConfig::stub();
        cfg.kind = ProviderKind::Remote;
        assert!(matches!(
            Provider::new(cfg),
            Err(ProviderError::Config(_))
        ));
    }

    struct FlakyBackend {
        failures_left: AtomicUsize,
        calls: AtomicUsize,
    }

    impl ProviderBackend for FlakyBackend {
        fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(ProviderError::RemoteStatus {
                    status: 503,
                    message: "busy".into(),
                    retryable: true,
                });
            }
            texts
                .iter()
                .map(|_| EmbeddingVector::normalized(vec![1.0, 0.0]))
                .collect()
        }
        fn embed_audio(&self, _: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError> {
            unimplemented!()
        }
        fn separate(&self, _: &AudioClip, _: &str) -> Result<AudioClip, ProviderError> {
            unimplemented!()
        }
        fn decompose(&self, _: &str) -> Result<EventList, ProviderError> {
            unimplemented!()
        }
    }

    #[test]
    fn retry_recovers_from_transient_errors() {
        let backend = Arc::new(FlakyBackend {
            failures_left: AtomicUsize::new(2),
            calls: AtomicUsize::new(0),
        });
        let mut cfg = ProviderConfig::stub();
        cfg.retry_backoff_s = vec![0.005, 0.005];
        let provider = Provider::with_backend(backend.clone(), cfg).unwrap();
        let out = provider.embed_text(&["hello".to_string()]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_gives_up_after_budget() {
        let backend = Arc::new(FlakyBackend {
            failures_left: AtomicUsize::new(usize::MAX / 2),
            calls: AtomicUsize::new(0),
        });
        let mut cfg = ProviderConfig::stub();
        cfg.retry_backoff_s = vec![0.001, 0.001];
        let provider = Provider::with_backend(backend.clone(), cfg).unwrap();
        assert!(provider.embed_text(&["hello".to_string()]).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fatal_errors_do_not_retry() {
        struct Fatal(AtomicUsize);
        impl ProviderBackend for Fatal {
            fn embed_text(&self, _: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Err(ProviderError::RemoteStatus {
                    status: 400,
                    message: "bad".into(),
                    retryable: false,
                })
            }
            fn embed_audio(&self, _: &[AudioClip]) -> Result<Vec<EmbeddingVector>, ProviderError> {
                unimplemented!()
            }
            fn separate(&self, _: &AudioClip, _: &str) -> Result<AudioClip, ProviderError> {
                unimplemented!()
            }
            fn decompose(&self, _: &str) -> Result<EventList, ProviderError> {
                unimplemented!()
            }
        }
        let backend = Arc::new(Fatal(AtomicUsize::new(0)));
        let provider = Provider::with_backend(backend.clone(), ProviderConfig::stub()).unwrap();
        assert!(provider.embed_text(&["x".to_string()]).is_err());
        assert_eq!(backend.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_inputs_rejected() {
        let provider = Provider::new(ProviderConfig::stub()).unwrap();
        assert!(matches!(
            provider.embed_text(&[]),
            Err(ProviderError::EmptyBatch)
        ));
        assert!(matches!(
            provider.embed_text(&["ok".into(), " ".into()]),
            Err(ProviderError::EmptyItem { index: 1 })
        ));
        assert!(matches!(
            provider.embed_audio(&[]),
            Err(ProviderError::EmptyBatch)
        ));
    }
}
