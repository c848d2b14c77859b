//! The chat-completion client contract and an HTTP implementation.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{Error, Result};

pub const API_KEY_ENV_PREFIX: &str = "CSTSCRUB_API_KEY_";

/// Failure to obtain a reply from a provider.
#[derive(Debug, Clone, PartialEq)]
pub enum SendError {
    /// HTTP 429. Retried with backoff.
    RateLimited { retry_after: Option<Duration> },
    /// Timeouts, connection failures and 5xx responses. Retried with backoff.
    Transient(String),
    /// Anything retrying cannot fix (bad credentials, missing transcript entry).
    Fatal(String),
}

impl fmt::Display for SendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SendError::RateLimited { .. } => f.write_str("rate limited (429)"),
            SendError::Transient(m) => write!(f, "transient failure: {m}"),
            SendError::Fatal(m) => write!(f, "fatal failure: {m}"),
        }
    }
}

/// A single-turn chat endpoint: prompt text in, reply text out.
pub trait LlmClient: Send + Sync {
    /// Provider tag recorded on every annotation (e.g. `gpt`).
    fn provider(&self) -> &str;
    fn model(&self) -> &str;
    fn temperature(&self) -> f64;
    fn send(&self, prompt: &str) -> Result<String, SendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    /// `POST /v1/chat/completions` style bodies and replies.
    #[default]
    Openai,
    /// `POST /v1/messages` style bodies and replies.
    Anthropic,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub model: String,
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub api: ApiStyle,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl ProviderConfig {
    /// `CSTSCRUB_API_KEY_<NAME>` with the name upper-cased and every
    /// non-alphanumeric character replaced by `_`.
    pub fn api_key_var(&self) -> String {
        let suffix: String = self
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("{API_KEY_ENV_PREFIX}{suffix}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.model.trim().is_empty() {
            return Err(Error::Config("provider name and model must be set".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "provider {}: temperature must be >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

pub struct HttpChatClient {
    config: ProviderConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Reads the API key from the environment; a missing key is a
    /// configuration error.
    pub fn from_env(config: ProviderConfig) -> Result<Self> {
        let var = config.api_key_var();
        let key = std::env::var(&var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                Error::Config(format!(
                    "provider {}: environment variable {var} is not set",
                    config.name
                ))
            })?;
        Self::new(config, key)
    }

    pub fn new(config: ProviderConfig, api_key: String) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpChatClient {
            config,
            api_key,
            http,
        })
    }

    fn request_body(&self, prompt: &str) -> Value {
        let messages = json!([{ "role": "user", "content": prompt }]);
        match self.config.api {
            ApiStyle::Openai => json!({
                "model": self.config.model,
                "temperature": self.config.temperature,
                "messages": messages,
            }),
            ApiStyle::Anthropic => json!({
                "model": self.config.model,
                "temperature": self.config.temperature,
                "max_tokens": self.config.max_tokens,
                "messages": messages,
            }),
        }
    }
}

fn extract_reply(api: ApiStyle, body: &Value) -> Option<String> {
    let text = match api {
        ApiStyle::Openai => body.pointer("/choices/0/message/content"),
        ApiStyle::Anthropic => body.pointer("/content/0/text"),
    };
    text.and_then(Value::as_str).map(str::to_string)
}

impl LlmClient for HttpChatClient {
    fn provider(&self) -> &str {
        &self.config.name
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn send(&self, prompt: &str) -> Result<String, SendError> {
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .json(&self.request_body(prompt));
        req = match self.config.api {
            ApiStyle::Openai => req.bearer_auth(&self.api_key),
            ApiStyle::Anthropic => req
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", "2023-06-01"),
        };
        let resp = req
            .send()
            .map_err(|e| SendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(SendError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            return Err(SendError::Transient(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(SendError::Fatal(format!(
                "server returned {status}: {text}"
            )));
        }
        let body: Value = resp
            .json()
            .map_err(|e| SendError::Transient(format!("unreadable response body: {e}")))?;
        extract_reply(self.config.api, &body)
            .ok_or_else(|| SendError::Fatal(format!("response has no reply text: {body}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before the attempt following failed attempt `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let scaled =
            self.base_delay.as_secs_f64() * self.factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(scaled.min(self.max_delay.as_secs_f64()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}
