//! Text-generation gateway.
//!
//! Callers see one [`Completion`] interface. Behind it a [`Gateway`] drives a
//! [`Transport`] (the in-process [`StubTransport`], or an HTTP transport
//! supplied by the service crate) with retries, backoff, a wall-clock budget
//! and a cap on in-flight calls.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::word_count;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_output_words: usize,
    #[serde(default)]
    pub determinism_seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>, max_output_words: usize) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_output_words,
            determinism_seed: None,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.determinism_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.max_output_words == 0 {
            return Err(LlmError::InvalidRequest("max_output_words must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("provider failed after {attempts} attempt(s): {last}")]
    ProviderFailure { attempts: u32, last: String },
    #[error("provider configuration error: {0}")]
    ConfigError(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

/// Failure of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Worth retrying: rate limits, 5xx, timeouts, dropped connections.
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

impl TransportError {
    /// Classifies an HTTP status code.
    pub fn from_status(status: u16, body: &str) -> Self {
        let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
        if status == 408 || status == 429 || status >= 500 {
            TransportError::Transient(msg)
        } else {
            TransportError::Fatal(msg)
        }
    }
}

/// One provider call, no retries.
pub trait Transport: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, req: &CompletionRequest, timeout: Duration) -> Result<String, TransportError>;
}

/// What the rest of the system talks to.
pub trait Completion: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub per_call_timeout: Duration,
    /// Total wall-clock budget across attempts and backoff.
    pub total_timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            per_call_timeout: Duration::from_secs(30),
            total_timeout: Duration::from_secs(100),
            max_in_flight: 4,
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1` (1s, 2s, 4s, ...).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Counting semaphore capping concurrent provider calls.
#[derive(Debug)]
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.permits.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    transport: Box<dyn Transport>,
    policy: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
    limiter: Limiter,
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>, policy: RetryPolicy) -> Self {
        Self::with_sleeper(transport, policy, Box::new(ThreadSleeper))
    }

    pub fn with_sleeper(transport: Box<dyn Transport>, policy: RetryPolicy, sleeper: Box<dyn Sleeper>) -> Self {
        let limiter = Limiter::new(policy.max_in_flight);
        Self {
            transport,
            policy,
            sleeper,
            limiter,
        }
    }

    /// Gateway over the deterministic offline stub.
    pub fn stub(seed: u64) -> Self {
        Self::new(Box::new(StubTransport::new(seed)), RetryPolicy::default())
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }
}

impl Completion for Gateway {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let remaining = self.policy.total_timeout.saturating_sub(started.elapsed());
            let timeout = self.policy.per_call_timeout.min(remaining);
            let last = match self.transport.send(req, timeout) {
                Ok(text) => return Ok(text),
                Err(TransportError::Fatal(msg)) => {
                    return Err(LlmError::ProviderFailure { attempts: attempt, last: msg })
                }
                Err(TransportError::Transient(msg)) => msg,
            };
            if attempt >= self.policy.max_attempts {
                return Err(LlmError::ProviderFailure { attempts: attempt, last });
            }
            let wait = self.policy.backoff(attempt);
            if started.elapsed() + wait >= self.policy.total_timeout {
                return Err(LlmError::ProviderFailure {
                    attempts: attempt,
                    last: format!("{last} (time budget exhausted)"),
                });
            }
            self.sleeper.sleep(wait);
        }
    }
}

/// Deterministic template-fill provider for offline runs and tests.
///
/// Recognizes the three request shapes the prompt engine sends (prompt
/// personalization, recap, summary update) by their user-prompt markers and
/// fills a fixed response structure from slot values found in the prompt.
/// Output depends only on the request and the seed.
#[derive(Debug, Clone)]
pub struct StubTransport {
    seed: u64,
}

impl StubTransport {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Transport for StubTransport {
    fn name(&self) -> &str {
        "stub"
    }

    fn send(&self, req: &CompletionRequest, _timeout: Duration) -> Result<String, TransportError> {
        Ok(stub_complete(req, req.determinism_seed.unwrap_or(self.seed)))
    }
}

const PLACEHOLDER_TASK: &str = "(task)";

fn slot<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let rest = line.trim_start().strip_prefix(label)?;
        let v = rest.trim();
        (!v.is_empty()).then_some(v)
    })
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn cap_words(text: &str, cap: usize) -> String {
    if word_count(text) <= cap {
        return text.to_owned();
    }
    text.split_whitespace().take(cap).collect::<Vec<_>>().join(" ")
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The stub's response to `req` under `seed`.
pub fn stub_complete(req: &CompletionRequest, seed: u64) -> String {
    let user = &req.user_prompt;
    let variant = fnv1a(user.as_bytes(), seed) % 3;
    let out = if user.contains("Generic Prompts:") {
        stub_personalize(user, variant)
    } else if let Some(name) = user
        .lines()
        .find_map(|l| l.trim().strip_prefix("Summarize the collaboration history for "))
    {
        let name = name.trim_end_matches(" across all recorded reflections.").trim();
        stub_recap(name, user, variant)
    } else if user.contains("Update the comprehensive meeting summary") {
        stub_summary(user)
    } else {
        let words: Vec<&str> = user.split_whitespace().take(20).collect();
        format!("Acknowledged: {}", words.join(" "))
    };
    cap_words(&out, req.max_output_words)
}

fn stub_personalize(user: &str, variant: u64) -> String {
    let name = slot(user, "- Participant:").unwrap_or("Participant");
    let task = slot(user, "- Assigned tasks:")
        .or_else(|| slot(user, "- Poster topic:"))
        .unwrap_or(PLACEHOLDER_TASK);
    let partner = slot(user, "- Partner:");
    let generic: Vec<&str> = user
        .split("Generic Prompts:")
        .nth(1)
        .unwrap_or("")
        .lines()
        .map(str::trim)
        .filter_map(|l| {
            let (num, rest) = l.split_once(". ")?;
            num.parse::<u32>().ok().map(|_| rest.trim())
        })
        .collect();
    let lead = match variant {
        0 => format!("Thinking about {task}"),
        1 => format!("As you work on {task}"),
        _ => format!("Looking at your part, {task}"),
    };
    generic
        .iter()
        .map(|g| {
            let mut q = lower_first(g);
            if let Some(p) = partner {
                q = q.replace("your partner", p);
            }
            format!("{name}, {lead}: {q}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn stub_recap(name: &str, user: &str, variant: u64) -> String {
    let task = slot(user, "Task:").map(|t| t.trim_end_matches('.')).unwrap_or(PLACEHOLDER_TASK);
    let close = match variant {
        0 => "The work so far has kept both partners aligned on the shared goal.",
        1 => "Communication between the partners has kept the sections consistent.",
        _ => "The steady pace has kept the collaboration on track for the next meeting.",
    };
    let progress = slot(user, "Latest notes:").unwrap_or("initial planning and task division");
    format!(
        "{name} began the collaboration by focusing on {task}. Recent progress covered {}. {close}",
        progress.trim_end_matches('.')
    )
}

fn stub_summary(user: &str) -> String {
    let name = slot(user, "Participant:").unwrap_or("The participant");
    let task = slot(user, "Task:").unwrap_or(PLACEHOLDER_TASK);
    let duties = slot(user, "Responsibilities:").unwrap_or("not stated");
    let meetings = slot(user, "Meetings so far:").unwrap_or("0");
    let reflections = slot(user, "Reflections so far:").unwrap_or("0");
    let notes_src = user
        .split("New material:")
        .nth(1)
        .unwrap_or("")
        .split("Return the full updated summary")
        .next()
        .unwrap_or("")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .flat_map(|l| l.split_whitespace())
        .take(24)
        .collect::<Vec<_>>()
        .join(" ");
    let notes = if notes_src.is_empty() {
        "no new material".to_owned()
    } else {
        notes_src
    };
    format!(
        "Participant: {name}\nTask: {task}\nResponsibilities: {duties}\nMeetings so far: {meetings}\nReflections so far: {reflections}\nLatest notes: {notes}"
    )
}
