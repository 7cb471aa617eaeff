//! Model backends: chat completion and text embedding.
//!
//! Everything downstream talks to a [`Backend`] trait object, so the
//! pipeline runs identically against a live HTTP endpoint
//! ([`HttpBackend`]), a deterministic offline stub ([`ScriptedStub`]), or
//! either of those wrapped in retry ([`RetryingBackend`]) and disk cache
//! ([`CachingBackend`]) layers. The canonical stack is
//! `Caching(Retrying(Http | Stub))`: the retrier sits inside the cache so
//! only settled, non-empty completions are ever persisted.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("no model route configured for role {0:?}")]
    UnknownRole(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("http status {status} from {endpoint}: {body}")]
    Http {
        status: u16,
        endpoint: String,
        body: String,
    },
    #[error("transport failure talking to {endpoint}: {detail}")]
    Transport { endpoint: String, detail: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend returned an empty completion for role {0:?}")]
    EmptyCompletion(String),
    #[error("gave up after {attempts} attempts: {source}")]
    RetriesExhausted {
        attempts: usize,
        #[source]
        source: Box<BackendError>,
    },
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("cache io error at {path}: {detail}")]
    Cache { path: String, detail: String },
    #[error("scripted stub was told to fail: {0}")]
    ScriptedFailure(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            BackendError::Transport { .. }
            | BackendError::EmptyCompletion(_)
            | BackendError::ScriptedFailure(_) => true,
            _ => false,
        }
    }
}

/// One chat call: a logical role (routed to a concrete model by the
/// backend), a system prompt, a user prompt, and sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        role: impl Into<String>,
        system: impl Into<String>,
        user: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, BackendError> {
        let req = Self {
            role: role.into(),
            system: system.into(),
            user: user.into(),
            temperature,
            max_tokens,
        };
        if req.role.is_empty() {
            return Err(BackendError::InvalidRequest("role is empty".into()));
        }
        if req.user.is_empty() {
            return Err(BackendError::InvalidRequest("user prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&temperature) || !temperature.is_finite() {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(req)
    }
}

/// Dense embedding of a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity in [-1, 1]. Errors on mismatched dimensions or a
/// zero-norm operand rather than silently returning 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, BackendError> {
    if a.dim() != b.dim() {
        return Err(BackendError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.0.iter().zip(b.0.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(BackendError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Chat + embedding provider. Implementations must be shareable across
/// threads; stateful ones use interior mutability.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

// ---------------------------------------------------------------------------
// Scripted stub

struct StubRule {
    needle: String,
    response: String,
    remaining: Option<usize>,
}

#[derive(Default)]
struct StubState {
    rules: Vec<StubRule>,
    planned_failures: VecDeque<BackendError>,
    chat_calls: usize,
    embed_calls: usize,
    captured: Vec<ChatRequest>,
}

/// Offline backend for tests and `--stub` runs. With no rules installed it
/// synthesizes deterministic, role-appropriate completions from a hash of
/// the request, so whole pipeline runs are reproducible byte for byte
/// without any network. Tests can script exact responses and failures.
pub struct ScriptedStub {
    dim: usize,
    state: Mutex<StubState>,
}

impl ScriptedStub {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "embedding dim must be >= 2");
        Self {
            dim,
            state: Mutex::new(StubState::default()),
        }
    }

    /// Respond with `response` whenever `needle` occurs in the user or
    /// system prompt. Rules are checked in insertion order before the
    /// deterministic fallback.
    pub fn add_rule(&self, needle: impl Into<String>, response: impl Into<String>) {
        self.state.lock().unwrap().rules.push(StubRule {
            needle: needle.into(),
            response: response.into(),
            remaining: None,
        });
    }

    /// Like [`Self::add_rule`] but the rule expires after `uses` matches.
    pub fn add_rule_times(
        &self,
        needle: impl Into<String>,
        response: impl Into<String>,
        uses: usize,
    ) {
        self.state.lock().unwrap().rules.push(StubRule {
            needle: needle.into(),
            response: response.into(),
            remaining: Some(uses),
        });
    }

    /// Queue `n` failures; the next `n` chat calls error before any rule
    /// or fallback is consulted.
    pub fn fail_next_chats(&self, n: usize, detail: &str) {
        let mut state = self.state.lock().unwrap();
        for _ in 0..n {
            state
                .planned_failures
                .push_back(BackendError::ScriptedFailure(detail.to_string()));
        }
    }

    pub fn chat_calls(&self) -> usize {
        self.state.lock().unwrap().chat_calls
    }

    pub fn embed_calls(&self) -> usize {
        self.state.lock().unwrap().embed_calls
    }

    /// All chat requests seen so far, in call order.
    pub fn captured_requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().captured.clone()
    }

    fn fallback_response(req: &ChatRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(req.role.as_bytes());
        hasher.update([0u8]);
        hasher.update(req.system.as_bytes());
        hasher.update([0u8]);
        hasher.update(req.user.as_bytes());
        let digest = hasher.finalize();
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));

        // Decision-style prompts enumerate their options; answer with one.
        if let Some(options) = extract_options(&req.user) {
            if !options.is_empty() {
                return options[(h % options.len() as u64) as usize].clone();
            }
        }

        const THEMES: [&str; 8] = [
            "withdrawal from replies",
            "search for reassurance",
            "escalating hopeless wording",
            "steady engagement with support",
            "rumination over a single event",
            "flattened affect across turns",
            "plans framed in the future tense",
            "irritable pushback at advice",
        ];
        let pick = |shift: u32| THEMES[((h >> shift) % 8) as usize];
        let body = format!(
            "Cognitive: the author shows {}.\nEmotional: the thread suggests {}.\nBehavioral: responses indicate {}.",
            pick(0),
            pick(8),
            pick(16)
        );
        if req.role == "synthesizer" {
            const GRADES: [&str; 3] = ["Low", "Medium", "High"];
            format!("{body}\nEvidence level: {}.", GRADES[((h >> 24) % 3) as usize])
        } else {
            body
        }
    }
}

/// Pull the option list out of a prompt line like
/// `... exactly one of: L0, L1, L2, L3.`
fn extract_options(user: &str) -> Option<Vec<String>> {
    let idx = user.rfind("one of:")?;
    let rest = user[idx + "one of:".len()..].lines().next()?;
    let rest = rest.trim().trim_end_matches('.');
    let options: Vec<String> = rest
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if options.is_empty() {
        None
    } else {
        Some(options)
    }
}

impl Backend for ScriptedStub {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock().unwrap();
        state.chat_calls += 1;
        state.captured.push(req.clone());
        if let Some(err) = state.planned_failures.pop_front() {
            return Err(err);
        }
        for rule in state.rules.iter_mut() {
            if rule.remaining == Some(0) {
                continue;
            }
            if req.user.contains(&rule.needle) || req.system.contains(&rule.needle) {
                if let Some(n) = rule.remaining.as_mut() {
                    *n -= 1;
                }
                return Ok(rule.response.clone());
            }
        }
        Ok(Self::fallback_response(req))
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.state.lock().unwrap().embed_calls += 1;
        Ok(deterministic_embedding(text, self.dim))
    }
}

/// Unit vector derived from a hash of the text: equal texts embed
/// identically, distinct texts almost surely do not.
pub fn deterministic_embedding(text: &str, dim: usize) -> EmbeddingVector {
    let digest = Sha256::digest(text.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        for x in &mut v {
            *x /= norm;
        }
    }
    EmbeddingVector(v)
}

// ---------------------------------------------------------------------------
// Retry layer

/// Retries retryable failures with exponential backoff and converts empty
/// completions into errors so nothing downstream (or in the cache) ever
/// sees blank model output.
pub struct RetryingBackend<B> {
    inner: B,
    max_retries: usize,
    base_backoff: Duration,
}

impl<B: Backend> RetryingBackend<B> {
    /// `max_retries` is the number of attempts after the first; pass a
    /// zero `base_backoff` in tests to avoid sleeping.
    pub fn new(inner: B, max_retries: usize, base_backoff: Duration) -> Self {
        Self {
            inner,
            max_retries,
            base_backoff,
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn run<T>(
        &self,
        mut attempt_fn: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let attempts = self.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            match attempt_fn() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    log::warn!("backend attempt {} failed, retrying: {e}", attempt + 1);
                    if !self.base_backoff.is_zero() {
                        std::thread::sleep(self.base_backoff * 2u32.saturating_pow(attempt as u32));
                    }
                    last = Some(e);
                }
                Err(e) => {
                    return if attempt == 0 {
                        Err(e)
                    } else {
                        Err(BackendError::RetriesExhausted {
                            attempts: attempt + 1,
                            source: Box::new(e),
                        })
                    };
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts,
            source: Box::new(last.expect("looped at least once")),
        })
    }
}

impl<B: Backend> Backend for RetryingBackend<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.run(|| {
            let text = self.inner.chat(req)?;
            if text.trim().is_empty() {
                Err(BackendError::EmptyCompletion(req.role.clone()))
            } else {
                Ok(text)
            }
        })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.run(|| self.inner.embed(text))
    }
}

// ---------------------------------------------------------------------------
// Disk cache layer

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Serialize, Deserialize)]
struct CachedChat {
    kind: String,
    role: String,
    response: String,
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    kind: String,
    embedding: Vec<f64>,
}

/// Content-addressed disk cache. The key hashes the full request payload,
/// so any change to prompts, temperature, or routing misses cleanly. Cache
/// files are plain JSON under `<dir>/<first two hex>/<hash>.json`.
pub struct CachingBackend<B> {
    inner: B,
    dir: PathBuf,
    counters: Mutex<CacheCounters>,
}

impl<B: Backend> CachingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            counters: Mutex::new(CacheCounters::default()),
        }
    }

    pub fn counters(&self) -> CacheCounters {
        *self.counters.lock().unwrap()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn key_path(&self, payload: &str) -> PathBuf {
        let hex = hex_digest(payload);
        self.dir.join(&hex[..2]).join(format!("{hex}.json"))
    }

    fn read_entry(&self, path: &Path) -> Option<String> {
        fs::read_to_string(path).ok()
    }

    fn write_entry(&self, path: &Path, content: &str) -> Result<(), BackendError> {
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| BackendError::Cache {
            path: parent.display().to_string(),
            detail: e.to_string(),
        })?;
        fs::write(path, content).map_err(|e| BackendError::Cache {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    fn bump(&self, hit: bool) {
        let mut c = self.counters.lock().unwrap();
        if hit {
            c.hits += 1;
        } else {
            c.misses += 1;
        }
    }
}

fn hex_digest(payload: &str) -> String {
    let digest = Sha256::digest(payload.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl<B: Backend> Backend for CachingBackend<B> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let payload = serde_json::json!({
            "kind": "chat",
            "role": req.role,
            "system": req.system,
            "user": req.user,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
        .to_string();
        let path = self.key_path(&payload);
        if let Some(raw) = self.read_entry(&path) {
            if let Ok(entry) = serde_json::from_str::<CachedChat>(&raw) {
                self.bump(true);
                return Ok(entry.response);
            }
            log::warn!("ignoring unreadable cache entry {}", path.display());
        }
        self.bump(false);
        let response = self.inner.chat(req)?;
        let entry = CachedChat {
            kind: "chat".into(),
            role: req.role.clone(),
            response: response.clone(),
        };
        self.write_entry(&path, &serde_json::to_string_pretty(&entry).expect("serializes"))?;
        Ok(response)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let payload = serde_json::json!({ "kind": "embed", "text": text }).to_string();
        let path = self.key_path(&payload);
        if let Some(raw) = self.read_entry(&path) {
            if let Ok(entry) = serde_json::from_str::<CachedEmbedding>(&raw) {
                self.bump(true);
                return Ok(EmbeddingVector(entry.embedding));
            }
            log::warn!("ignoring unreadable cache entry {}", path.display());
        }
        self.bump(false);
        let vector = self.inner.embed(text)?;
        let entry = CachedEmbedding {
            kind: "embed".into(),
            embedding: vector.0.clone(),
        };
        self.write_entry(&path, &serde_json::to_string(&entry).expect("serializes"))?;
        Ok(vector)
    }
}

/// Count of entries and total bytes under a cache directory.
pub fn cache_disk_stats(dir: &Path) -> Result<(u64, u64), BackendError> {
    let mut entries = 0u64;
    let mut bytes = 0u64;
    if !dir.exists() {
        return Ok((0, 0));
    }
    let shards = fs::read_dir(dir).map_err(|e| BackendError::Cache {
        path: dir.display().to_string(),
        detail: e.to_string(),
    })?;
    for shard in shards {
        let shard = shard.map_err(|e| BackendError::Cache {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
        if !shard.path().is_dir() {
            continue;
        }
        let files = fs::read_dir(shard.path()).map_err(|e| BackendError::Cache {
            path: shard.path().display().to_string(),
            detail: e.to_string(),
        })?;
        for file in files {
            let file = file.map_err(|e| BackendError::Cache {
                path: shard.path().display().to_string(),
                detail: e.to_string(),
            })?;
            if file.path().extension().is_some_and(|e| e == "json") {
                entries += 1;
                bytes += file.metadata().map(|m| m.len()).unwrap_or(0);
            }
        }
    }
    Ok((entries, bytes))
}

/// Delete every cache entry, returning how many were removed.
pub fn cache_clear(dir: &Path) -> Result<u64, BackendError> {
    let (entries, _) = cache_disk_stats(dir)?;
    if dir.exists() {
        for shard in fs::read_dir(dir).map_err(|e| BackendError::Cache {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })? {
            let shard = shard.map_err(|e| BackendError::Cache {
                path: dir.display().to_string(),
                detail: e.to_string(),
            })?;
            if shard.path().is_dir() {
                fs::remove_dir_all(shard.path()).map_err(|e| BackendError::Cache {
                    path: shard.path().display().to_string(),
                    detail: e.to_string(),
                })?;
            }
        }
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// HTTP backend

/// Routing and transport settings for [`HttpBackend`].
#[derive(Debug, Clone)]
pub struct HttpSettings {
    /// Base URL such as `https://api.example.com/v1` (no trailing slash).
    pub base_url: String,
    /// Environment variable holding the bearer token, if the endpoint
    /// needs one.
    pub api_key_env: Option<String>,
    /// Logical role -> concrete model identifier.
    pub chat_models: HashMap<String, String>,
    pub embed_model: String,
    pub timeout: Duration,
}

/// Client for OpenAI-style `/chat/completions` and `/embeddings` routes.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    settings: HttpSettings,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        let api_key = match &settings.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                endpoint: settings.base_url.clone(),
                detail: e.to_string(),
            })?;
        Ok(Self {
            client,
            settings,
            api_key,
        })
    }

    fn post(&self, endpoint: &str, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let url = format!("{}/{}", self.settings.base_url.trim_end_matches('/'), endpoint);
        let mut request = self.client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transport {
            endpoint: url.clone(),
            detail: e.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport {
            endpoint: url.clone(),
            detail: e.to_string(),
        })?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http {
                status,
                endpoint: url,
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}

/// Request body for a chat completion call.
pub fn build_chat_body(req: &ChatRequest, model: &str) -> serde_json::Value {
    serde_json::json!({
        "model": model,
        "messages": [
            { "role": "system", "content": req.system },
            { "role": "user", "content": req.user },
        ],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

/// Extract the completion text from a chat response body.
pub fn parse_chat_response(body: &serde_json::Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .ok_or_else(|| {
            BackendError::MalformedResponse("missing choices[0].message.content".into())
        })
}

/// Extract the embedding from an embeddings response body.
pub fn parse_embed_response(body: &serde_json::Value) -> Result<EmbeddingVector, BackendError> {
    let values = body
        .pointer("/data/0/embedding")
        .and_then(|v| v.as_array())
        .ok_or_else(|| BackendError::MalformedResponse("missing data[0].embedding".into()))?;
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        out.push(
            v.as_f64()
                .ok_or_else(|| BackendError::MalformedResponse("non-numeric embedding".into()))?,
        );
    }
    if out.is_empty() {
        return Err(BackendError::MalformedResponse("empty embedding".into()));
    }
    Ok(EmbeddingVector(out))
}

impl Backend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let model = self
            .settings
            .chat_models
            .get(&req.role)
            .ok_or_else(|| BackendError::UnknownRole(req.role.clone()))?;
        let body = self.post("chat/completions", &build_chat_body(req, model))?;
        parse_chat_response(&body)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let body = self.post(
            "embeddings",
            &serde_json::json!({ "model": self.settings.embed_model, "input": text }),
        )?;
        parse_embed_response(&body)
    }
}
