//! Client for completion-style inference servers.
//!
//! One interface serves free-form generation (augmentation, NER evaluation)
//! and log-probability scoring of forced continuations (constrained label
//! decoding). [`ModelClient`] adds retries with exponential backoff, stop
//! sequence truncation and a bound on in-flight requests on top of any
//! [`CompletionBackend`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::tokenization::Tokenizer;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Connection refused/reset, 429 or 5xx. Retried by the client.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: usize, last_error: String },
    #[error("no candidates to score")]
    NoCandidates,
    #[error("candidate `{0}` has no tokens")]
    EmptyCandidate(String),
    #[error("backend does not return log-probabilities")]
    LogprobsUnsupported,
    #[error("no mock fixture for {kind} `{key}`")]
    MissingFixture { kind: &'static str, key: String },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop_sequences = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredContinuation {
    pub continuation: String,
    /// Sum of the per-token log-probabilities of the continuation.
    pub total_logprob: f64,
    pub token_count: usize,
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    /// Raw generated text; stop sequences are applied by the client.
    async fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;

    /// Log-probability of `continuation` following `prompt`.
    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, BackendError>;
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            concurrency: 4,
        }
    }
}

#[derive(Clone)]
pub struct ModelClient {
    backend: Arc<dyn CompletionBackend>,
    config: ClientConfig,
    permits: Arc<Semaphore>,
}

impl ModelClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: ClientConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.concurrency.max(1)));
        Self {
            backend,
            config,
            permits,
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let factor = 1u64 << attempt.min(20);
        Duration::from_millis(
            self.config
                .initial_backoff_ms
                .saturating_mul(factor)
                .min(self.config.max_backoff_ms),
        )
    }

    async fn with_retry<T, F, Fut>(&self, mut call: F) -> Result<T, BackendError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, BackendError>>,
    {
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore closed");
                call().await
            };
            attempt += 1;
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    if attempt >= attempts {
                        return Err(BackendError::BackendUnavailable {
                            attempts: attempt,
                            last_error: e.to_string(),
                        });
                    }
                    log::debug!("attempt {attempt}/{attempts} failed: {e}");
                    tokio::time::sleep(self.backoff(attempt - 1)).await;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Generates text, truncated at the first stop sequence.
    pub async fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        if req.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        let raw = self.with_retry(|| self.backend.generate(req)).await?;
        Ok(truncate_at_stop(&raw, &req.stop_sequences).to_string())
    }

    /// Completes every request; results come back in request order.
    pub async fn complete_many(
        &self,
        reqs: &[GenerationRequest],
    ) -> Vec<Result<String, BackendError>> {
        futures::future::join_all(reqs.iter().map(|r| self.complete(r))).await
    }

    /// Scores each candidate as a forced continuation of `prompt`.
    pub async fn score_continuations(
        &self,
        prompt: &str,
        candidates: &[String],
    ) -> Result<Vec<ScoredContinuation>, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::NoCandidates);
        }
        if let Some(empty) = candidates.iter().find(|c| c.is_empty()) {
            return Err(BackendError::EmptyCandidate(empty.clone()));
        }
        let scored = futures::future::join_all(
            candidates
                .iter()
                .map(|c| self.with_retry(move || self.backend.score(prompt, c))),
        )
        .await;
        let scored = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
        if let Some(bad) = scored.iter().find(|s| s.token_count == 0) {
            return Err(BackendError::EmptyCandidate(bad.continuation.clone()));
        }
        Ok(scored)
    }
}

/// Hex SHA-256 of a prompt, the key of the mock tables.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub generation_table: Vec<GenerationEntry>,
    #[serde(default)]
    pub score_table: Vec<ScoreEntry>,
}

/// Either `prompt` or `prompt_sha256` identifies the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub reply: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub continuation: String,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<usize>,
}

fn entry_key(prompt: &Option<String>, hash: &Option<String>) -> Result<String, BackendError> {
    match (prompt, hash) {
        (Some(p), _) => Ok(prompt_hash(p)),
        (None, Some(h)) => Ok(h.to_ascii_lowercase()),
        (None, None) => Err(BackendError::Config(
            "mock entry needs `prompt` or `prompt_sha256`".into(),
        )),
    }
}

/// Table-driven model. Lookups that miss are errors, never defaults.
#[derive(Debug, Default)]
pub struct MockModel {
    generation_table: HashMap<String, String>,
    score_table: HashMap<(String, String), (f64, Option<usize>)>,
    tokenizer: Option<Arc<Tokenizer>>,
}

impl MockModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixtures(fixtures: MockFixtures) -> Result<Self, BackendError> {
        let mut m = Self::new();
        for e in fixtures.generation_table {
            m.generation_table
                .insert(entry_key(&e.prompt, &e.prompt_sha256)?, e.reply);
        }
        for e in fixtures.score_table {
            m.score_table.insert(
                (entry_key(&e.prompt, &e.prompt_sha256)?, e.continuation),
                (e.logprob, e.tokens),
            );
        }
        Ok(m)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let fixtures: MockFixtures = serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_fixtures(fixtures)
    }

    /// Token boundaries for truncation and counting come from this tokenizer;
    /// without one every char counts as a token.
    pub fn with_tokenizer(mut self, tokenizer: Arc<Tokenizer>) -> Self {
        self.tokenizer = Some(tokenizer);
        self
    }

    pub fn insert_reply(&mut self, prompt: &str, reply: impl Into<String>) {
        self.generation_table.insert(prompt_hash(prompt), reply.into());
    }

    pub fn insert_score(&mut self, prompt: &str, continuation: impl Into<String>, logprob: f64) {
        self.score_table
            .insert((prompt_hash(prompt), continuation.into()), (logprob, None));
    }

    fn count_tokens(&self, text: &str) -> usize {
        match &self.tokenizer {
            Some(t) => t.encode(text).len(),
            None => text.chars().count(),
        }
    }

    fn truncate_tokens(&self, text: &str, max: usize) -> String {
        match &self.tokenizer {
            Some(t) => {
                let ids = t.encode(text);
                if ids.len() <= max {
                    text.to_string()
                } else {
                    t.decode(&ids[..max]).unwrap_or_default()
                }
            }
            None => text.chars().take(max).collect(),
        }
    }
}

#[async_trait]
impl CompletionBackend for MockModel {
    async fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let key = prompt_hash(&req.prompt);
        let reply = self
            .generation_table
            .get(&key)
            .ok_or(BackendError::MissingFixture {
                kind: "prompt",
                key,
            })?;
        Ok(self.truncate_tokens(reply, req.max_new_tokens))
    }

    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, BackendError> {
        let key = (prompt_hash(prompt), continuation.to_string());
        let &(logprob, tokens) =
            self.score_table
                .get(&key)
                .ok_or_else(|| BackendError::MissingFixture {
                    kind: "score",
                    key: format!("{} / {continuation}", key.0),
                })?;
        Ok(ScoredContinuation {
            continuation: continuation.to_string(),
            total_logprob: logprob,
            token_count: tokens.unwrap_or_else(|| self.count_tokens(continuation)),
        })
    }
}

type GenerateFn = dyn Fn(&GenerationRequest, usize) -> Result<String, BackendError> + Send + Sync;
type ScoreFn = dyn Fn(&str, &str) -> Result<f64, BackendError> + Send + Sync;

/// Backend driven by closures; the generator also receives a call counter.
pub struct ScriptedModel {
    generate: Box<GenerateFn>,
    score: Option<Box<ScoreFn>>,
    calls: AtomicUsize,
}

impl ScriptedModel {
    pub fn new(
        generate: impl Fn(&GenerationRequest, usize) -> Result<String, BackendError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            generate: Box::new(generate),
            score: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_scorer(
        mut self,
        score: impl Fn(&str, &str) -> Result<f64, BackendError> + Send + Sync + 'static,
    ) -> Self {
        self.score = Some(Box::new(score));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl CompletionBackend for ScriptedModel {
    async fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.generate)(req, n)
    }

    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, BackendError> {
        let score = self.score.as_ref().ok_or(BackendError::LogprobsUnsupported)?;
        Ok(ScoredContinuation {
            continuation: continuation.to_string(),
            total_logprob: score(prompt, continuation)?,
            token_count: continuation.split_whitespace().count().max(1),
        })
    }
}

/// Connection settings for [`HttpBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL; requests go to `{endpoint}/completions`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: None,
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Serialize)]
struct CompletionBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    echo: bool,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

/// Open completion API over HTTP (`POST /completions`).
pub struct HttpBackend {
    http: reqwest::Client,
    config: HttpConfig,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { http, config })
    }

    async fn post(&self, body: &CompletionBody<'_>) -> Result<CompletionResponse, BackendError> {
        let url = format!("{}/completions", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.http.post(&url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            let code = status.as_u16();
            return Err(if code == 408 || code == 429 || status.is_server_error() {
                BackendError::Transient(format!("status {code}: {body}"))
            } else {
                BackendError::Status { status: code, body }
            });
        }
        resp.json::<CompletionResponse>()
            .await
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let body = CompletionBody {
            model: self.config.model.as_deref(),
            prompt: &req.prompt,
            max_tokens: req.max_new_tokens,
            temperature: req.temperature,
            logprobs: None,
            echo: false,
            stop: &req.stop_sequences,
            seed: req.seed,
        };
        let resp = self.post(&body).await?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::InvalidResponse("no choices".into()))
    }

    /// Echoes `prompt + continuation` and sums the logprobs of the tokens
    /// that overlap the continuation (character offsets).
    async fn score(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<ScoredContinuation, BackendError> {
        let full = format!("{prompt}{continuation}");
        let body = CompletionBody {
            model: self.config.model.as_deref(),
            prompt: &full,
            max_tokens: 1,
            temperature: 0.0,
            logprobs: Some(1),
            echo: true,
            stop: &[],
            seed: None,
        };
        let resp = self.post(&body).await?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("no choices".into()))?;
        let lp = choice.logprobs.ok_or(BackendError::LogprobsUnsupported)?;
        if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
            return Err(BackendError::InvalidResponse(
                "logprob arrays differ in length".into(),
            ));
        }
        let prompt_chars = prompt.chars().count();
        let full_chars = full.chars().count();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..lp.tokens.len() {
            let start = lp.text_offset[i];
            let end = start + lp.tokens[i].chars().count();
            // tokens generated past the echoed text are not part of the candidate
            if start >= full_chars {
                break;
            }
            if end > prompt_chars {
                total += lp.token_logprobs[i].ok_or_else(|| {
                    BackendError::InvalidResponse("continuation token without logprob".into())
                })?;
                count += 1;
            }
        }
        if count == 0 {
            return Err(BackendError::EmptyCandidate(continuation.to_string()));
        }
        Ok(ScoredContinuation {
            continuation: continuation.to_string(),
            total_logprob: total,
            token_count: count,
        })
    }
}

/// Backend selector: `mock:<fixtures.json>` or an `http(s)://` base URL.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock(String),
    Http(String),
}

impl BackendSpec {
    pub fn parse(s: &str) -> Result<Self, BackendError> {
        if let Some(path) = s.strip_prefix("mock:") {
            if path.is_empty() {
                return Err(BackendError::Config("mock backend needs a fixture path".into()));
            }
            Ok(BackendSpec::Mock(path.to_string()))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http(s.to_string()))
        } else {
            Err(BackendError::Config(format!(
                "backend `{s}` is neither `mock:<path>` nor an http(s) URL"
            )))
        }
    }

    pub fn build(
        &self,
        http: impl FnOnce(String) -> HttpConfig,
        tokenizer: Option<Arc<Tokenizer>>,
    ) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        match self {
            BackendSpec::Mock(path) => {
                let mut m = MockModel::from_file(path)?;
                if let Some(t) = tokenizer {
                    m = m.with_tokenizer(t);
                }
                Ok(Arc::new(m))
            }
            BackendSpec::Http(url) => Ok(Arc::new(HttpBackend::new(http(url.clone()))?)),
        }
    }
}
