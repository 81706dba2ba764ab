//! Uniform access to the optimizer and target LLMs.
//!
//! A [`Gateway`] binds one [`Backend`] per [`Role`], retries transient
//! failures with exponential backoff, caps the number of requests in flight
//! and keeps a [`UsageLedger`]. Backends are either the OpenAI-compatible
//! HTTP client in [`http`] or the deterministic mocks in [`mock`].

pub mod http;
pub mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const META_MAX_TOKENS: u32 = 1024;
pub const TASK_MAX_TOKENS: u32 = 512;
pub const DEFAULT_REASONING_TAG: &str = "think";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("backend rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("backend returned empty content")]
    ContentEmpty,
    #[error("no mock rule matches the request: {0}")]
    UnmatchedPattern(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl LlmError {
    /// Errors that must stop a run, as opposed to degrading to a fallback.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            LlmError::BackendUnavailable { .. } | LlmError::Rejected { .. } | LlmError::Config(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Optimizer,
    Target,
}

impl Role {
    fn slot(self) -> usize {
        match self {
            Role::Optimizer => 0,
            Role::Target => 1,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Optimizer => "optimizer",
            Role::Target => "target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(user: impl Into<String>) -> Self {
        Self {
            system: String::new(),
            user: user.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: META_MAX_TOKENS,
            model_id: String::new(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = system.into();
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user.is_empty() {
            return Err(LlmError::InvalidRequest("user message is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// Worth retrying: transport errors, 429, 5xx.
    Transient(String),
    /// Not worth retrying: other 4xx.
    Rejected { status: u16, body: String },
    /// The backend cannot answer this request at all.
    Unmatched(String),
}

pub trait Backend: Send + Sync {
    /// `call_index` is the per-role sequence number of the logical request;
    /// retries of one request reuse it.
    fn complete(&self, req: &ChatRequest, call_index: u64) -> Result<ChatResponse, AttemptError>;

    /// Model identifier filled into requests that leave it empty.
    fn model_id(&self) -> &str {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on every further attempt.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, failed_attempts: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (failed_attempts - 1).min(16)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Price {
    /// USD per million prompt tokens.
    pub input_per_million: f64,
    /// USD per million completion tokens.
    pub output_per_million: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceTable {
    pub optimizer: Price,
    pub target: Price,
}

impl PriceTable {
    pub fn for_role(&self, role: Role) -> Price {
        match role {
            Role::Optimizer => self.optimizer,
            Role::Target => self.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleUsage {
    pub calls: u64,
    pub attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl RoleUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn cost(&self, price: Price) -> f64 {
        (self.prompt_tokens as f64 * price.input_per_million
            + self.completion_tokens as f64 * price.output_per_million)
            / 1e6
    }
}

/// Cumulative per-role usage. Every field only ever grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageLedger {
    pub optimizer: RoleUsage,
    pub target: RoleUsage,
}

impl UsageLedger {
    pub fn role(&self, role: Role) -> &RoleUsage {
        match role {
            Role::Optimizer => &self.optimizer,
            Role::Target => &self.target,
        }
    }

    fn role_mut(&mut self, role: Role) -> &mut RoleUsage {
        match role {
            Role::Optimizer => &mut self.optimizer,
            Role::Target => &mut self.target,
        }
    }

    pub fn cost(&self, role: Role, prices: &PriceTable) -> f64 {
        self.role(role).cost(prices.for_role(role))
    }

    pub fn total_cost(&self, prices: &PriceTable) -> f64 {
        self.cost(Role::Optimizer, prices) + self.cost(Role::Target, prices)
    }
}

/// Serializable gateway counters, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatewayState {
    pub usage: UsageLedger,
    pub next_index: [u64; 2],
}

struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct GatewayBuilder {
    optimizer: Arc<dyn Backend>,
    target: Arc<dyn Backend>,
    retry: RetryPolicy,
    max_in_flight: usize,
    reasoning_tag: Option<String>,
}

impl GatewayBuilder {
    pub fn target(mut self, backend: Arc<dyn Backend>) -> Self {
        self.target = backend;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Tag whose blocks are stripped from responses; `None` disables it.
    pub fn reasoning_tag(mut self, tag: Option<String>) -> Self {
        self.reasoning_tag = tag.filter(|t| !t.is_empty());
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            backends: [self.optimizer, self.target],
            retry: self.retry,
            reasoning_tag: self.reasoning_tag,
            limiter: Limiter {
                cap: self.max_in_flight,
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
            state: Mutex::new(GatewayState::default()),
        }
    }
}

pub struct Gateway {
    backends: [Arc<dyn Backend>; 2],
    retry: RetryPolicy,
    reasoning_tag: Option<String>,
    limiter: Limiter,
    state: Mutex<GatewayState>,
}

impl Gateway {
    /// Both roles bound to one backend.
    pub fn builder(backend: Arc<dyn Backend>) -> GatewayBuilder {
        GatewayBuilder {
            optimizer: backend.clone(),
            target: backend,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            reasoning_tag: Some(DEFAULT_REASONING_TAG.to_string()),
        }
    }

    pub fn usage(&self) -> UsageLedger {
        self.state.lock().expect("gateway state poisoned").usage
    }

    pub fn snapshot(&self) -> GatewayState {
        *self.state.lock().expect("gateway state poisoned")
    }

    pub fn restore(&self, state: GatewayState) {
        *self.state.lock().expect("gateway state poisoned") = state;
    }

    /// Reserves `n` consecutive call indices so that concurrent callers get
    /// deterministic indices regardless of scheduling.
    pub fn reserve(&self, role: Role, n: u64) -> u64 {
        let mut s = self.state.lock().expect("gateway state poisoned");
        let base = s.next_index[role.slot()];
        s.next_index[role.slot()] += n;
        base
    }

    pub fn generate(&self, req: &ChatRequest, role: Role) -> Result<ChatResponse, LlmError> {
        let index = self.reserve(role, 1);
        self.generate_at(req, role, index)
    }

    pub fn generate_at(
        &self,
        req: &ChatRequest,
        role: Role,
        index: u64,
    ) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let backend = &self.backends[role.slot()];
        let filled;
        let req = if req.model_id.is_empty() && !backend.model_id().is_empty() {
            filled = ChatRequest {
                model_id: backend.model_id().to_string(),
                ..req.clone()
            };
            &filled
        } else {
            req
        };

        let max_attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            let outcome = {
                let _slot = self.limiter.acquire();
                backend.complete(req, index)
            };
            self.bump_attempts(role);
            match outcome {
                Ok(mut resp) => {
                    self.record(role, &resp);
                    if let Some(tag) = &self.reasoning_tag {
                        resp.text = strip_reasoning(&resp.text, tag);
                    }
                    if resp.text.trim().is_empty() {
                        return Err(LlmError::ContentEmpty);
                    }
                    return Ok(resp);
                }
                Err(AttemptError::Rejected { status, body }) => {
                    return Err(LlmError::Rejected { status, body });
                }
                Err(AttemptError::Unmatched(what)) => return Err(LlmError::UnmatchedPattern(what)),
                Err(AttemptError::Transient(msg)) => {
                    log::warn!("{role} attempt {attempt}/{max_attempts} failed: {msg}");
                    last = msg;
                    if attempt < max_attempts {
                        thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(LlmError::BackendUnavailable {
            attempts: max_attempts,
            last,
        })
    }

    fn bump_attempts(&self, role: Role) {
        self.state.lock().expect("gateway state poisoned").usage.role_mut(role).attempts += 1;
    }

    fn record(&self, role: Role, resp: &ChatResponse) {
        let mut s = self.state.lock().expect("gateway state poisoned");
        let u = s.usage.role_mut(role);
        u.calls += 1;
        u.prompt_tokens += resp.prompt_tokens;
        u.completion_tokens += resp.completion_tokens;
    }
}

/// Removes `<tag>…</tag>` blocks. A dangling `</tag>` drops everything
/// before it; a dangling `<tag>` drops everything after it.
pub fn strip_reasoning(text: &str, tag: &str) -> String {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = String::new();
    let mut rest = text;
    if let Some(c) = rest.find(&close) {
        if rest.find(&open).is_none_or(|o| o > c) {
            rest = &rest[c + close.len()..];
        }
    }
    loop {
        match rest.find(&open) {
            Some(o) => {
                out.push_str(&rest[..o]);
                match rest[o..].find(&close) {
                    Some(c) => rest = &rest[o + c + close.len()..],
                    None => break,
                }
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    out.trim().to_string()
}

/// Character-derived token estimate used by the mock backends.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
