use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{validate_messages, ChatMessage, ChatParams, ChatProvider, ProviderError};

/// Environment variable consulted for the API key when none is configured.
pub const API_KEY_ENV: &str = "PB_API_KEY";

/// Exponential backoff: `max_attempts` tries in total, sleeping
/// `base_delay * factor^(n-1)` before retry `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry.saturating_sub(1))
    }

    pub(crate) fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.delay_before_retry(attempt);
                    log::warn!("attempt {attempt}/{attempts} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(ProviderError::Network { message, .. }) => {
                    return Err(ProviderError::Network { attempts: attempt, message })
                }
                Err(ProviderError::Timeout { .. }) => return Err(ProviderError::Timeout { attempts: attempt }),
                Err(e) => return Err(e),
            }
        }
    }
}

pub(crate) fn classify(err: reqwest::Error) -> ProviderError {
    if err.is_timeout() {
        ProviderError::Timeout { attempts: 1 }
    } else {
        ProviderError::Network {
            attempts: 1,
            message: err.to_string(),
        }
    }
}

pub(crate) fn resolve_api_key(explicit: Option<String>) -> Option<String> {
    explicit
        .filter(|k| !k.is_empty())
        .or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
}

pub(crate) fn http_client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

/// POSTs `body` to `url` and returns the raw body of a 2xx response.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<String, ProviderError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(classify)?;
    let status = resp.status();
    let text = resp.text().map_err(classify)?;
    if !status.is_success() {
        return Err(ProviderError::Status {
            status: status.as_u16(),
            body: text,
        });
    }
    Ok(text)
}

/// Blocking client for `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct OpenAiChatClient {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl OpenAiChatClient {
    /// `api_key` falls back to `PB_API_KEY` when `None`.
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        OpenAiChatClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: resolve_api_key(api_key),
            client: http_client(Duration::from_secs(120)),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = http_client(timeout);
        self
    }

    pub fn request_body(messages: &[ChatMessage], params: &ChatParams) -> serde_json::Value {
        let mut body = json!({
            "model": params.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    pub fn parse_reply(body: &str) -> Result<String, ProviderError> {
        let parsed: CompletionBody =
            serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(ProviderError::EmptyResponse);
        }
        Ok(content)
    }
}

impl ChatProvider for OpenAiChatClient {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        validate_messages(messages)?;
        params.validate()?;
        let url = format!("{}/chat/completions", self.base_url);
        let body = Self::request_body(messages, params);
        let raw = self
            .retry
            .run(|| post_json(&self.client, &url, self.api_key.as_deref(), &body))?;
        Self::parse_reply(&raw)
    }
}
