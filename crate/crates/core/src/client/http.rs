//! Live completions endpoint: wire format, retries and rate limiting.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ClientError, Completion, CompletionBackend, CompletionParams, CompletionRequest, TokenObservation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// Minimal POST-only transport. Tests substitute counting or scripted
/// implementations.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = self.agent.post(&request.url);
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let mut response = builder.send(&request.body[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1),
    /// capped at `max_delay`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Client-side token bucket shared by every request of one backend.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = requests.max(1) as f64;
        Self {
            per_minute: capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Wait time until one token is available, consuming it if zero.
    fn try_take(&self) -> Duration {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let (tokens, last) = &mut *state;
        let now = Instant::now();
        let refill = now.duration_since(*last).as_secs_f64() * self.per_minute / 60.0;
        *tokens = (*tokens + refill).min(self.per_minute);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            Duration::ZERO
        } else {
            Duration::from_secs_f64((1.0 - *tokens) * 60.0 / self.per_minute)
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = self.try_take();
            if wait.is_zero() {
                return;
            }
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL; requests go to `{base_url}/completions`.
    pub base_url: String,
    pub api_key: String,
    pub requests_per_minute: u32,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    /// Read the credential from the named environment variable.
    pub fn from_env(base_url: impl Into<String>, api_key_env: &str) -> Result<Self, ClientError> {
        let api_key = std::env::var(api_key_env)
            .map_err(|_| ClientError::MissingCredential(api_key_env.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            api_key,
            requests_per_minute: 60,
            retry: RetryPolicy::default(),
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    transport: Arc<dyn Transport>,
    limiter: RateLimiter,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, transport: Arc<dyn Transport>) -> Self {
        let limiter = RateLimiter::per_minute(config.requests_per_minute);
        Self {
            config,
            transport,
            limiter,
        }
    }

    fn http_request(&self, request: &CompletionRequest) -> HttpRequest {
        HttpRequest {
            url: format!("{}/completions", self.config.base_url.trim_end_matches('/')),
            headers: vec![
                ("Content-Type".into(), "application/json".into()),
                ("Authorization".into(), format!("Bearer {}", self.config.api_key)),
            ],
            body: serde_json::to_vec(&request_body(&request.prompt, &request.params))
                .expect("request body serializes"),
        }
    }
}

/// JSON body for the completions endpoint.
pub fn request_body(prompt: &str, params: &CompletionParams) -> Value {
    json!({
        "model": params.model,
        "prompt": prompt,
        "max_tokens": params.max_tokens,
        "temperature": params.temperature,
        "logprobs": params.top_k_logprobs,
        "stop": params.stop,
    })
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        request.params.validate()?;
        let http = self.http_request(request);
        let policy = &self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire();
            let outcome = self.transport.post(&http);
            let exhausted = attempt > policy.max_retries;
            let error = match outcome {
                Ok(r) if (200..300).contains(&r.status) => {
                    return parse_completion_reply(&r.body, request.params.top_k_logprobs);
                }
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(ClientError::Auth {
                        status: r.status,
                        body: String::from_utf8_lossy(&r.body).into_owned(),
                    });
                }
                Ok(r) if r.status == 429 => ClientError::RateLimitExhausted { attempts: attempt },
                Ok(r) if r.status >= 500 => ClientError::Transport {
                    attempts: attempt,
                    message: format!("HTTP {}", r.status),
                },
                Ok(r) => {
                    return Err(ClientError::Status {
                        status: r.status,
                        body: String::from_utf8_lossy(&r.body).into_owned(),
                    });
                }
                Err(TransportError::Timeout) => ClientError::Timeout { attempts: attempt },
                Err(TransportError::Io(message)) => ClientError::Transport {
                    attempts: attempt,
                    message,
                },
            };
            if exhausted {
                return Err(error);
            }
            log::debug!("retrying completion after {error}");
            std::thread::sleep(policy.delay(attempt));
        }
    }

    fn kind(&self) -> &'static str {
        "live"
    }
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    top_logprobs: Option<Vec<Option<HashMap<String, f64>>>>,
}

/// Parse a completions reply into a [`Completion`].
///
/// The sampled token is removed from its position's top list when the
/// endpoint includes it, so alternates are strictly the runners-up.
pub fn parse_completion_reply(body: &[u8], top_k: u8) -> Result<Completion, ClientError> {
    let malformed = |m: String| ClientError::MalformedReply(m);
    let reply: Reply = serde_json::from_slice(body).map_err(|e| malformed(e.to_string()))?;
    let choice = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| malformed("no choices".into()))?;
    let lp = choice
        .logprobs
        .ok_or_else(|| malformed("reply has no logprobs section".into()))?;
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n {
        return Err(malformed(format!(
            "{n} tokens but {} token_logprobs",
            lp.token_logprobs.len()
        )));
    }
    let tops = lp.top_logprobs.unwrap_or_default();
    if !tops.is_empty() && tops.len() != n {
        return Err(malformed(format!("{n} tokens but {} top_logprobs", tops.len())));
    }

    let mut tokens = Vec::with_capacity(n);
    let mut deduped = 0;
    for (i, (token, logprob)) in lp.tokens.into_iter().zip(lp.token_logprobs).enumerate() {
        let logprob = logprob.ok_or_else(|| malformed(format!("token {i} has a null logprob")))?;
        if !logprob.is_finite() || logprob > 1e-6 {
            return Err(malformed(format!("token {i} has logprob {logprob}")));
        }
        let mut alternates: Vec<(String, f64)> = tops
            .get(i)
            .cloned()
            .flatten()
            .unwrap_or_default()
            .into_iter()
            .collect();
        let before = alternates.len();
        alternates.retain(|(t, _)| *t != token);
        deduped += before - alternates.len();
        alternates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        alternates.truncate(top_k as usize);
        tokens.push(TokenObservation {
            token,
            logprob: logprob.min(0.0),
            alternates,
        });
    }
    if deduped > 0 {
        log::debug!("removed the sampled token from {deduped} top-logprob lists");
    }

    let completion = Completion {
        text: choice.text,
        tokens,
    };
    if completion.joined_tokens() != completion.text {
        return Err(malformed("token surfaces do not reconstruct the completion text".into()));
    }
    Ok(completion)
}
