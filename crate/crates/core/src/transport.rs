//! Blocking JSON-over-HTTP client shared by every remote backend
//! (encoder, wire tools, summarizer, sub-goal planner).
//!
//! Connection failures, timeouts and 5xx responses are retried with
//! exponential backoff; 4xx responses and undecodable bodies are not.
//! Every attempt is returned to the caller so it can be logged.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig { timeout_ms: 10_000, retries: 2, backoff_ms: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("connection to {url} failed: {message}")]
    Connect { url: String, message: String },
    #[error("{url} returned HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("{url} returned a body that is not valid JSON: {message}")]
    Decode { url: String, message: String },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Connect { .. } => true,
            TransportError::Status { status, .. } => *status >= 500,
            TransportError::Decode { .. } => false,
        }
    }
}

/// One HTTP attempt as seen by the retry loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: u32,
    /// "ok", "http 503", "connect error", ...
    pub outcome: String,
    /// Delay slept before the next attempt (0 for the final one).
    pub backoff_ms: u64,
}

pub struct JsonClient {
    agent: ureq::Agent,
    config: HttpConfig,
}

impl JsonClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { agent, config }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        let mut resp = self.agent.post(url).send_json(body).map_err(|e| TransportError::Connect {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(TransportError::Status { url: url.to_string(), status });
        }
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Connect {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| TransportError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        })
    }

    /// POST `body` to `url`, retrying transient failures.
    pub fn post_json(&self, url: &str, body: &Value) -> (Result<Value, TransportError>, Vec<Attempt>) {
        let mut attempts = Vec::new();
        let mut attempt = 0u32;
        loop {
            let result = self.post_once(url, body);
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(TransportError::Status { status, .. }) => format!("http {status}"),
                Err(TransportError::Connect { .. }) => "connect error".to_string(),
                Err(TransportError::Decode { .. }) => "invalid json".to_string(),
            };
            let retry = matches!(&result, Err(e) if e.retryable()) && attempt < self.config.retries;
            let backoff_ms = if retry { self.config.backoff_ms << attempt } else { 0 };
            attempts.push(Attempt { attempt, outcome, backoff_ms });
            if !retry {
                return (result, attempts);
            }
            tracing::debug!(url, attempt, backoff_ms, "retrying request");
            std::thread::sleep(Duration::from_millis(backoff_ms));
            attempt += 1;
        }
    }
}
