//! HTTP client for an OpenAI-compatible chat-completions endpoint.
//!
//! Requests carry the rendered prompt as a single user message. Bearer
//! tokens rotate round-robin; every request is independent, so one slow
//! call never blocks another.

use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::prompt::{build_political_prompt, parse_political_answer, FactorPrompt};
use super::{BackendCapabilities, BackendError, ScoringBackend};

pub const ENV_URL: &str = "SCORER_URL";
pub const ENV_TOKENS: &str = "SCORER_TOKENS";

#[derive(Debug)]
pub struct RemoteInferenceClient {
    http: reqwest::Client,
    url: String,
    tokens: Vec<String>,
    next: AtomicUsize,
    pub model: String,
    pub seed: Option<u64>,
}

impl RemoteInferenceClient {
    pub fn new(url: impl Into<String>, tokens: Vec<String>) -> Self {
        RemoteInferenceClient {
            http: reqwest::Client::new(),
            url: url.into(),
            tokens,
            next: AtomicUsize::new(0),
            model: "gpt-3.5-turbo".to_string(),
            seed: Some(42),
        }
    }

    /// `SCORER_URL` plus comma-separated `SCORER_TOKENS`; `None` when the
    /// URL is unset.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_URL).ok().filter(|u| !u.trim().is_empty())?;
        let tokens = std::env::var(ENV_TOKENS)
            .map(|t| parse_tokens(&t))
            .unwrap_or_default();
        Some(Self::new(url, tokens))
    }

    fn next_token(&self) -> Option<&str> {
        if self.tokens.is_empty() {
            return None;
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.tokens.len();
        Some(&self.tokens[i])
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut req = self.http.post(&self.url).json(&self.request_body(prompt));
        if let Some(tok) = self.next_token() {
            req = req.bearer_auth(tok);
        }
        let resp = req.send().await.map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::Rejected(format!("HTTP {status}")));
        }
        let body: Value = resp.json().await.map_err(|e| BackendError::Rejected(e.to_string()))?;
        extract_content(&body)
            .ok_or_else(|| BackendError::Rejected("response has no message content".into()))
    }
}

pub fn parse_tokens(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

/// `choices[0].message.content`, falling back to a bare `content` field.
pub fn extract_content(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .or_else(|| body.get("content"))
        .and_then(Value::as_str)
        .map(String::from)
}

#[async_trait]
impl ScoringBackend for RemoteInferenceClient {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            max_concurrent_requests: 8 * self.tokens.len().max(1),
            expected_latency_ms: 3_000,
        }
    }

    async fn classify_political(&self, text: &str) -> Result<bool, BackendError> {
        let raw = self.complete(&build_political_prompt(text)).await?;
        Ok(parse_political_answer(&raw))
    }

    async fn complete_factor(&self, prompt: &FactorPrompt) -> Result<String, BackendError> {
        self.complete(&prompt.render()).await
    }
}
