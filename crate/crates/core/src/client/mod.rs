//! Completions with per-token log-probabilities.
//!
//! Three backends share the [`CompletionBackend`] trait: a live HTTP client
//! for the completions wire protocol, a fixture store that records and
//! replays request/response pairs, and a seeded simulator whose score and
//! vocabulary bias can be injected per gender.

mod http;
mod replay;
mod simulate;

pub use http::{
    parse_completion_reply, request_body, HttpBackend, HttpConfig, HttpRequest, HttpResponse,
    RateLimiter, RetryPolicy, Transport, TransportError, UreqTransport,
};
pub use replay::{record_and_replay, FixtureMode, FixtureRecord, FixtureStore, RecordingBackend, ReplayBackend};
pub use simulate::{tokenize, BiasInjection, PerGender, SimulatedBackend, SimulatorConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The endpoint never returns more than five alternates per position.
pub const MAX_TOP_K: u8 = 5;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("rate limit still exceeded after {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    MalformedReply(String),
    #[error("no recorded fixture for key {key}")]
    ReplayMiss { key: String },
    #[error("fixture store {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid completion parameters: {0}")]
    InvalidParams(String),
    #[error("simulation: {0}")]
    Simulation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_k_logprobs: u8,
    pub stop: Vec<String>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            model: "text-davinci-002".into(),
            max_tokens: 256,
            temperature: 0.0,
            top_k_logprobs: MAX_TOP_K,
            stop: vec!["||".into()],
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(1..=MAX_TOP_K).contains(&self.top_k_logprobs) {
            return Err(ClientError::InvalidParams(format!(
                "top_k_logprobs must be in 1..={MAX_TOP_K}, got {}",
                self.top_k_logprobs
            )));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::InvalidParams("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ClientError::InvalidParams(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One generated token with its natural-log probability and the
/// highest-ranked tokens that were not chosen, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenObservation {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub alternates: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<TokenObservation>,
}

impl Completion {
    /// Concatenated token surfaces; equals `text` for well-formed values.
    pub fn joined_tokens(&self) -> String {
        self.tokens.iter().map(|t| t.token.as_str()).collect()
    }
}

/// A single completion request. `sample` distinguishes repeated draws for
/// the same prompt; it is part of the fixture key but not sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub params: CompletionParams,
    #[serde(default)]
    pub sample: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, params: CompletionParams) -> Self {
        Self {
            prompt: prompt.into(),
            params,
            sample: 0,
        }
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError>;

    /// Short label recorded in report metadata.
    fn kind(&self) -> &'static str;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        (**self).complete(request)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        (**self).complete(request)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }
}
