//! Chat-completion transport.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer token for live calls.
pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("http error: {0}")]
    Http(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
}

/// Anything that can answer a single-turn chat prompt.
pub trait ChatTransport: Sync {
    fn complete(&self, model: &str, prompt: &str, temperature: f64) -> Result<String, TransportError>;
}

/// JSON body of a single-turn chat-completion request.
pub fn completion_body(model: &str, prompt: &str, temperature: f64) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    })
}

/// Pull `choices[0].message.content` out of a completion response.
pub fn completion_text(body: &Value) -> Result<String, TransportError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            let mut shown = body.to_string();
            shown.truncate(200);
            TransportError::Malformed(shown)
        })
}

/// Blocking HTTP transport for OpenAI-compatible chat-completion endpoints.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }

    /// Build a transport with the key from [`API_KEY_ENV`], if set.
    pub fn from_env(endpoint: &str, timeout: Duration) -> Result<Self, TransportError> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, model: &str, prompt: &str, temperature: f64) -> Result<String, TransportError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&completion_body(model, prompt, temperature));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::Http(e.to_string()))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(200);
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        completion_text(&body)
    }
}
