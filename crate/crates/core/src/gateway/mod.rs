//! Model gateway: every model call goes through a [`Backend`].
//!
//! Two families of backends exist: [`http::HttpBackend`] for chat-completions
//! servers and the deterministic backends in [`scripted`] used by tests, the
//! synthetic world and offline runs.

pub mod http;
pub mod scripted;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub want_token_alternatives: bool,
    pub alternatives_top_k: u32,
    pub seed: Option<u64>,
    /// Forced start of the assistant reply; not included in the result text.
    pub assistant_prefix: Option<String>,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_new_tokens: 512,
            want_token_alternatives: false,
            alternatives_top_k: 10,
            seed: None,
            assistant_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Some(m) = self.messages.iter().find(|m| m.role != Role::Assistant && m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("empty {:?} message", m.role)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_new_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_new_tokens must be > 0".into()));
        }
        if self.want_token_alternatives && self.alternatives_top_k < 2 {
            return Err(GatewayError::InvalidRequest("alternatives_top_k must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub token: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Sorted by descending probability; present iff requested.
    pub first_token_alternatives: Option<Vec<TokenAlternative>>,
    pub backend_name: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
    #[error("{0}")]
    Scripted(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A model endpoint. Implementations must be safe to call concurrently.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        (**self).generate(request)
    }
}

/// Validates the request, calls the backend and checks the result contract.
pub fn generate(backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
    request.validate()?;
    let mut result = backend.generate(request)?;
    match (&mut result.first_token_alternatives, request.want_token_alternatives) {
        (Some(alts), true) => {
            if alts.iter().any(|a| !(0.0..=1.0).contains(&a.probability)) {
                return Err(GatewayError::Protocol("alternative probability outside [0,1]".into()));
            }
            alts.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        }
        (None, true) => {
            return Err(GatewayError::Protocol("token alternatives requested but not returned".into()));
        }
        (Some(_), false) => result.first_token_alternatives = None,
        (None, false) => {}
    }
    Ok(result)
}

/// Per-index outcome of [`generate_batch`].
#[derive(Debug)]
pub struct BatchResults {
    pub results: Vec<Result<GenerationResult, GatewayError>>,
}

#[derive(Debug, thiserror::Error)]
#[error("{} of {} batch requests failed; first at index {}: {}", failures.len(), total, failures[0].0, failures[0].1)]
pub struct BatchError {
    pub total: usize,
    pub failures: Vec<(usize, GatewayError)>,
    /// Successful results at their request index.
    pub partial: Vec<Option<GenerationResult>>,
}

impl BatchResults {
    pub fn failure_count(&self) -> usize {
        self.results.iter().filter(|r| r.is_err()).count()
    }

    /// All results, or an aggregate error that keeps the successful ones.
    pub fn into_all(self) -> Result<Vec<GenerationResult>, BatchError> {
        if self.results.iter().all(Result::is_ok) {
            return Ok(self.results.into_iter().map(Result::unwrap).collect());
        }
        let total = self.results.len();
        let mut failures = Vec::new();
        let mut partial = Vec::with_capacity(total);
        for (i, r) in self.results.into_iter().enumerate() {
            match r {
                Ok(v) => partial.push(Some(v)),
                Err(e) => {
                    failures.push((i, e));
                    partial.push(None);
                }
            }
        }
        Err(BatchError { total, failures, partial })
    }
}

/// Runs requests with at most `max_concurrency` in flight. Results are
/// returned in request order and failures are isolated per index.
pub fn generate_batch(backend: &dyn Backend, requests: &[GenerationRequest], max_concurrency: usize) -> BatchResults {
    let n = requests.len();
    let workers = max_concurrency.max(1).min(n);
    if workers <= 1 {
        return BatchResults { results: requests.iter().map(|r| generate(backend, r)).collect() };
    }
    let slots: Mutex<Vec<Option<Result<GenerationResult, GatewayError>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = generate(backend, &requests[i]);
                slots.lock().expect("batch slots poisoned")[i] = Some(out);
            });
        }
    });
    let results =
        slots.into_inner().expect("batch slots poisoned").into_iter().map(|r| r.expect("every slot filled")).collect();
    BatchResults { results }
}

/// Bounded exponential backoff for retryable errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_backoff_ms: 200, max_backoff_ms: 5_000 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }

    /// Calls `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut retry = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if retry >= self.max_retries {
                        return Err(GatewayError::RetriesExhausted { attempts: retry + 1, last: Box::new(e) });
                    }
                    std::thread::sleep(self.backoff(retry));
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Wraps a backend and counts calls that reach it.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(request)
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::FnBackend;
    use super::*;

    fn req(text: &str) -> GenerationRequest {
        GenerationRequest::new(vec![ChatMessage::user(text)])
    }

    fn echo() -> FnBackend {
        FnBackend::new("echo", |r: &GenerationRequest| {
            let text = &r.messages[0].content;
            if text == "fail" {
                return Err(GatewayError::Scripted("boom".into()));
            }
            // Uneven work so completion order differs from request order.
            let spin = (text.len() * 7919) % 13;
            std::thread::sleep(Duration::from_millis(spin as u64));
            Ok(text.to_uppercase())
        })
    }

    #[test]
    fn batch_keeps_order() {
        let reqs: Vec<_> = (0..16).map(|i| req(&format!("req {i}"))).collect();
        let out = generate_batch(&echo(), &reqs, 4).into_all().unwrap();
        assert_eq!(out.len(), 16);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.text, format!("REQ {i}"));
        }
    }

    #[test]
    fn batch_isolates_failures() {
        let mut reqs: Vec<_> = (0..8).map(|i| req(&format!("r{i}"))).collect();
        reqs[5] = req("fail");
        let out = generate_batch(&echo(), &reqs, 3);
        assert_eq!(out.failure_count(), 1);
        let err = out.into_all().unwrap_err();
        assert_eq!(err.failures.len(), 1);
        assert_eq!(err.failures[0].0, 5);
        assert_eq!(err.partial.iter().filter(|p| p.is_some()).count(), 7);
        assert!(err.partial[5].is_none());
    }

    #[test]
    fn batch_same_at_any_concurrency() {
        let reqs: Vec<_> = (0..12).map(|i| req(&format!("item {i}"))).collect();
        let a: Vec<_> = generate_batch(&echo(), &reqs, 1).into_all().unwrap().into_iter().map(|r| r.text).collect();
        let b: Vec<_> = generate_batch(&echo(), &reqs, 8).into_all().unwrap().into_iter().map(|r| r.text).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn validation() {
        let mut r = req("hi");
        r.want_token_alternatives = true;
        r.alternatives_top_k = 1;
        assert!(matches!(r.validate(), Err(GatewayError::InvalidRequest(_))));
        assert!(req(" ").validate().is_err());
        let mut r = req("hi");
        r.max_new_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn missing_alternatives_is_protocol_error() {
        let mut r = req("hi");
        r.want_token_alternatives = true;
        assert!(matches!(generate(&echo(), &r), Err(GatewayError::Protocol(_))));
    }

    #[test]
    fn retry_policy() {
        let policy = RetryPolicy { max_retries: 2, initial_backoff_ms: 1, max_backoff_ms: 2 };
        let mut attempts = 0;
        let out: Result<u32, _> = policy.run(|| {
            attempts += 1;
            if attempts < 3 {
                Err(GatewayError::Transport("reset".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(out.unwrap(), 7);
        assert_eq!(attempts, 3);

        let mut attempts = 0;
        let out: Result<u32, _> = policy.run(|| {
            attempts += 1;
            Err(GatewayError::Transport("reset".into()))
        });
        assert!(matches!(out, Err(GatewayError::RetriesExhausted { attempts: 3, .. })));

        let mut attempts = 0;
        let out: Result<u32, _> = policy.run(|| {
            attempts += 1;
            Err(GatewayError::Status { status: 400, body: String::new() })
        });
        assert!(out.is_err());
        assert_eq!(attempts, 1);
        assert_eq!(policy.backoff(10), Duration::from_millis(2));
    }
}
