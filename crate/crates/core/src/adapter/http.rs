use std::sync::Arc;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use log::warn;
use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_logits, AttentionDump, AttentionRef, ModelBackend, ModelRequest, ModelResponse};
use crate::error::AdapterError;

/// Retries transport-level failures (connection errors and HTTP 5xx) with
/// exponential backoff. Content errors are never retried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, given `n` failed attempts so far (n ≥ 1).
    pub fn backoff(&self, failed: u32) -> Duration {
        self.initial_backoff * self.multiplier.saturating_pow(failed.saturating_sub(1))
    }
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(AdapterError),
}

fn with_retry<T>(
    policy: &RetryPolicy,
    mut attempt: impl FnMut() -> Attempt<T>,
) -> Result<T, AdapterError> {
    let max = policy.max_attempts.max(1);
    let mut failed = 0;
    loop {
        match attempt() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(message) => {
                failed += 1;
                if failed >= max {
                    return Err(AdapterError::Transport {
                        attempts: failed,
                        message,
                    });
                }
                let delay = policy.backoff(failed);
                warn!("attempt {failed}/{max} failed ({message}); retrying in {delay:?}");
                thread::sleep(delay);
            }
        }
    }
}

/// Sends a JSON POST and classifies the outcome for the retry loop.
fn post_json(
    client: &Client,
    url: &str,
    token: Option<&str>,
    body: &serde_json::Value,
) -> Attempt<Response> {
    let mut req = client.post(url).json(body);
    if let Some(token) = token {
        req = req.bearer_auth(token);
    }
    match req.send() {
        Err(e) => Attempt::Retry(e.to_string()),
        Ok(resp) if resp.status().is_server_error() => {
            Attempt::Retry(format!("HTTP {}", resp.status().as_u16()))
        }
        Ok(resp) if !resp.status().is_success() => {
            let status = resp.status().as_u16();
            let body = resp.text().unwrap_or_default();
            Attempt::Fail(AdapterError::Rejected { status, body })
        }
        Ok(resp) => Attempt::Done(resp),
    }
}

fn build_client(timeout: Duration) -> Result<Client, AdapterError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| AdapterError::Transport {
            attempts: 0,
            message: format!("cannot build HTTP client: {e}"),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub base_url: String,
    /// Forwarded as a bearer token.
    pub token: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        LiveConfig {
            base_url: base_url.into(),
            token: None,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Serialize)]
struct RespondRequest<'a> {
    item_id: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
    want_logits: bool,
    want_attention: bool,
}

#[derive(Deserialize)]
struct RespondReply {
    text: Option<String>,
    #[serde(default)]
    option_logits: Option<Vec<f64>>,
    #[serde(default)]
    attention_b64: Option<String>,
}

/// Client for `POST {base}/v1/respond`.
pub struct HttpBackend {
    config: LiveConfig,
    client: Client,
}

impl HttpBackend {
    pub fn new(config: LiveConfig) -> Result<Self, AdapterError> {
        let client = build_client(config.timeout)?;
        Ok(HttpBackend { config, client })
    }

    fn url(&self) -> String {
        format!("{}/v1/respond", self.config.base_url.trim_end_matches('/'))
    }

    fn decode(request: &ModelRequest, body: &str) -> Result<ModelResponse, AdapterError> {
        let malformed = |reason: String| AdapterError::MalformedReply {
            item_id: request.item_id.clone(),
            reason,
        };
        let reply: RespondReply =
            serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
        let raw_text = reply
            .text
            .ok_or_else(|| malformed("reply has no \"text\"".into()))?;
        let option_logits = reply
            .option_logits
            .as_deref()
            .map(check_logits)
            .transpose()
            .map_err(malformed)?;
        let attention = match reply.attention_b64 {
            None => None,
            Some(b64) => {
                let bytes = BASE64
                    .decode(b64.as_bytes())
                    .map_err(|e| malformed(format!("attention_b64: {e}")))?;
                let dump = AttentionDump::from_bytes(&bytes)
                    .map_err(|e| malformed(format!("attention dump: {e}")))?;
                Some(AttentionRef::Inline(Arc::new(dump)))
            }
        };
        Ok(ModelResponse {
            item_id: request.item_id.clone(),
            tag: request.tag.clone(),
            raw_text,
            option_logits,
            attention,
        })
    }
}

impl ModelBackend for HttpBackend {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError> {
        let body = serde_json::to_value(RespondRequest {
            item_id: &request.item_id,
            prompt: &request.prompt,
            image_b64: request.image.as_ref().map(|b| BASE64.encode(b)),
            want_logits: request.want_logits,
            want_attention: request.want_attention,
        })
        .expect("request serializes");
        let url = self.url();
        let text = with_retry(&self.config.retry, || {
            match post_json(&self.client, &url, self.config.token.as_deref(), &body) {
                Attempt::Done(resp) => match resp.text() {
                    Ok(t) => Attempt::Done(t),
                    Err(e) => Attempt::Retry(e.to_string()),
                },
                Attempt::Retry(m) => Attempt::Retry(m),
                Attempt::Fail(e) => Attempt::Fail(e),
            }
        })?;
        Self::decode(request, &text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub token: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl ChatConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            base_url: base_url.into(),
            model: model.into(),
            token: None,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(300),
        }
    }
}

/// OpenAI-compatible `POST {base}/v1/chat/completions`, used as the
/// generation backend. Images go inline as PNG/JPEG data URLs.
pub struct ChatBackend {
    config: ChatConfig,
    client: Client,
}

impl ChatBackend {
    pub fn new(config: ChatConfig) -> Result<Self, AdapterError> {
        let client = build_client(config.timeout)?;
        Ok(ChatBackend { config, client })
    }

    fn body(&self, request: &ModelRequest) -> serde_json::Value {
        let mut content = vec![json!({"type": "text", "text": request.prompt})];
        if let Some(bytes) = &request.image {
            let mime = if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
                "image/png"
            } else {
                "image/jpeg"
            };
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{mime};base64,{}", BASE64.encode(bytes))}
            }));
        }
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        })
    }
}

impl ModelBackend for ChatBackend {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = self.body(request);
        let text = with_retry(&self.config.retry, || {
            match post_json(&self.client, &url, self.config.token.as_deref(), &body) {
                Attempt::Done(resp) => match resp.text() {
                    Ok(t) => Attempt::Done(t),
                    Err(e) => Attempt::Retry(e.to_string()),
                },
                Attempt::Retry(m) => Attempt::Retry(m),
                Attempt::Fail(e) => Attempt::Fail(e),
            }
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| AdapterError::MalformedReply {
                item_id: request.item_id.clone(),
                reason: e.to_string(),
            })?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| AdapterError::MalformedReply {
                item_id: request.item_id.clone(),
                reason: "no choices[0].message.content".into(),
            })?;
        Ok(ModelResponse {
            item_id: request.item_id.clone(),
            tag: request.tag.clone(),
            raw_text: content.to_string(),
            option_logits: None,
            attention: None,
        })
    }
}
