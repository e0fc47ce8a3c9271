//! Blocking client for an OpenAI-compatible chat-completions endpoint that
//! returns per-token log-probabilities.
//!
//! Requests go through the response cache first. Misses are sent with a
//! bounded number of in-flight requests, a token-bucket rate limit, and
//! exponential backoff on timeouts, 429s and 5xx responses.

mod cache;
mod throttle;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use cache::{request_digest, CacheEntry, ResponseCache};
pub use throttle::{is_retryable_status, RetryPolicy, Semaphore, TokenBucket};

use crate::affinity::{TokenLogprob, TokenLogprobs};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-small";
pub const DEFAULT_MAX_TOKENS: u32 = 64;

pub const ENV_API_KEY: &str = "OBJSEARCH_API_KEY";
pub const ENV_BASE_URL: &str = "OBJSEARCH_BASE_URL";
pub const ENV_MODEL: &str = "OBJSEARCH_MODEL";
pub const ENV_EMBEDDING_MODEL: &str = "OBJSEARCH_EMBEDDING_MODEL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no API credential configured (set {ENV_API_KEY} or OPENAI_API_KEY)")]
    MissingCredential,
    #[error("endpoint does not return token logprobs (logprobs unsupported)")]
    LogprobsUnsupported,
    #[error("request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Requests per second; 0 disables the limit.
    pub rate_per_sec: f64,
    pub burst: u32,
    pub cache_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            model: DEFAULT_MODEL.into(),
            embedding_model: DEFAULT_EMBEDDING_MODEL.into(),
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            rate_per_sec: 8.0,
            burst: 4,
            cache_path: None,
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by environment variables.
    pub fn from_env() -> Self {
        let var = |names: &[&str]| {
            names
                .iter()
                .find_map(|n| std::env::var(n).ok().filter(|v| !v.trim().is_empty()))
        };
        let mut cfg = Self {
            api_key: var(&[ENV_API_KEY, "OPENAI_API_KEY"]),
            ..Self::default()
        };
        if let Some(url) = var(&[ENV_BASE_URL, "OPENAI_BASE_URL"]) {
            cfg.base_url = url;
        }
        if let Some(model) = var(&[ENV_MODEL]) {
            cfg.model = model;
        }
        if let Some(model) = var(&[ENV_EMBEDDING_MODEL]) {
            cfg.embedding_model = model;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub system_text: String,
    pub user_text: String,
    pub logprobs_requested: bool,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: &str, system_text: String, user_text: String) -> Self {
        Self {
            model: model.to_string(),
            temperature: 0.0,
            system_text,
            user_text,
            logprobs_requested: true,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    pub fn to_wire(&self) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "logprobs": true,
            "messages": [
                {"role": "system", "content": self.system_text},
                {"role": "user", "content": self.user_text},
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub answer_text: String,
    pub token_logprobs: TokenLogprobs,
    pub model_echo: String,
    pub latency_ms: u64,
}

/// Parses a chat-completions response body.
pub fn parse_completion(body: &Value, latency_ms: u64) -> Result<CompletionResult, GatewayError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| GatewayError::Malformed("missing choices[0]".into()))?;
    let answer_text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let content = match choice.get("logprobs") {
        None | Some(Value::Null) => return Err(GatewayError::LogprobsUnsupported),
        Some(lp) => match lp.get("content") {
            None | Some(Value::Null) => return Err(GatewayError::LogprobsUnsupported),
            Some(c) => c
                .as_array()
                .ok_or_else(|| GatewayError::Malformed("logprobs.content is not a list".into()))?,
        },
    };
    let mut tokens = Vec::with_capacity(content.len());
    for item in content {
        let logprob = item
            .get("logprob")
            .and_then(Value::as_f64)
            .ok_or_else(|| GatewayError::Malformed("token without numeric logprob".into()))?;
        if logprob.is_nan() || logprob > 1e-9 {
            return Err(GatewayError::Malformed(format!("invalid logprob {logprob}")));
        }
        tokens.push(TokenLogprob {
            token: item
                .get("token")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            logprob: logprob.min(0.0),
        });
    }
    if tokens.is_empty() {
        return Err(GatewayError::Malformed("empty token logprob list".into()));
    }
    Ok(CompletionResult {
        answer_text,
        token_logprobs: TokenLogprobs { tokens },
        model_echo: body
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        latency_ms,
    })
}

pub struct Gateway {
    config: GatewayConfig,
    agent: ureq::Agent,
    cache: ResponseCache,
    in_flight: Semaphore,
    bucket: TokenBucket,
    network_calls: AtomicUsize,
    backoffs: Mutex<Vec<Duration>>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let cache = match &config.cache_path {
            Some(p) => ResponseCache::open(p),
            None => ResponseCache::in_memory(),
        };
        Self {
            in_flight: Semaphore::new(config.max_in_flight),
            bucket: TokenBucket::new(config.rate_per_sec, config.burst),
            config,
            agent,
            cache,
            network_calls: AtomicUsize::new(0),
            backoffs: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// HTTP requests actually sent (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Backoff delays slept so far, in order.
    pub fn backoff_history(&self) -> Vec<Duration> {
        self.backoffs.lock().unwrap().clone()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let key = request_digest(request);
        if let Some(hit) = self.cache.lookup(&key) {
            return Ok(hit);
        }
        let started = Instant::now();
        let body = self.post_json("chat/completions", &request.to_wire())?;
        let result = parse_completion(&body, started.elapsed().as_millis() as u64)?;
        self.cache.store(&key, &result);
        Ok(result)
    }

    /// Embedding vector for `text` from the embeddings route.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = self.post_json(
            "embeddings",
            &json!({"model": self.config.embedding_model, "input": text}),
        )?;
        body.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| GatewayError::Malformed("non-numeric embedding".into()))
            })
            .collect()
    }

    fn post_json(&self, route: &str, payload: &Value) -> Result<Value, GatewayError> {
        let key = self
            .config
            .api_key
            .as_deref()
            .ok_or(GatewayError::MissingCredential)?;
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), route);
        let policy = self.config.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = policy.delay(attempt - 1);
                self.backoffs.lock().unwrap().push(delay);
                std::thread::sleep(delay);
            }
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.bucket.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                self.agent
                    .post(&url)
                    .header("Authorization", &format!("Bearer {key}"))
                    .send_json(payload)
            };
            let mut response = match outcome {
                Ok(r) => r,
                Err(e @ (ureq::Error::Timeout(_)
                | ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::Protocol(_)
                | ureq::Error::BodyStalled)) => {
                    log::debug!("transient transport error on attempt {attempt}: {e}");
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(GatewayError::Transport(e.to_string())),
            };
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| GatewayError::Transport(e.to_string()));
            if is_retryable_status(status) {
                log::debug!("retryable status {status} on attempt {attempt}");
                last = format!("HTTP {status}");
                continue;
            }
            let text = text?;
            if !(200..300).contains(&status) {
                return Err(GatewayError::Http { status, body: text });
            }
            return serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(e.to_string()));
        }
        Err(GatewayError::RetriesExhausted {
            attempts,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let r = CompletionRequest::new("gpt-4o-mini", "s".into(), "u".into());
        let w = r.to_wire();
        assert_eq!(w["logprobs"], true);
        assert_eq!(w["temperature"], 0.0);
        assert_eq!(w["max_tokens"], 64);
        assert_eq!(w["messages"][0]["role"], "system");
        assert_eq!(w["messages"][1]["content"], "u");
    }

    #[test]
    fn parses_logprobs() {
        let body = json!({
            "model": "gpt-4o-mini-2024",
            "choices": [{
                "message": {"role": "assistant", "content": "screwdriver"},
                "logprobs": {"content": [
                    {"token": "screw", "logprob": -0.25},
                    {"token": "driver", "logprob": -0.0}
                ]}
            }]
        });
        let r = parse_completion(&body, 3).unwrap();
        assert_eq!(r.answer_text, "screwdriver");
        assert_eq!(r.token_logprobs.len(), 2);
        assert!(r.token_logprobs.tokens.iter().all(|t| t.logprob <= 0.0));
        assert_eq!(r.model_echo, "gpt-4o-mini-2024");
    }

    #[test]
    fn missing_logprobs_is_distinct() {
        let body = json!({"choices": [{"message": {"content": "x"}}]});
        assert!(matches!(
            parse_completion(&body, 0),
            Err(GatewayError::LogprobsUnsupported)
        ));
        let body = json!({"choices": [{"message": {"content": "x"}, "logprobs": null}]});
        assert!(matches!(
            parse_completion(&body, 0),
            Err(GatewayError::LogprobsUnsupported)
        ));
        assert!(matches!(
            parse_completion(&json!({"nope": 1}), 0),
            Err(GatewayError::Malformed(_))
        ));
    }

    #[test]
    fn missing_credential() {
        let gw = Gateway::new(GatewayConfig::default());
        let r = CompletionRequest::new("m", "s".into(), "u".into());
        assert!(matches!(gw.complete(&r), Err(GatewayError::MissingCredential)));
        assert_eq!(gw.network_calls(), 0);
    }
}
