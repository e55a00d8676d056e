//! Chat-completion-compatible HTTP backend.
//!
//! Sends `{"model", "messages", "temperature", "max_tokens"}` and reads
//! `choices[0].message.content` plus optional usage counts. The credential
//! comes from the `LLM_API_KEY` environment variable and is never logged.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::{Backend, BackendError, BackendResponse, PromptRole};

pub const API_KEY_VAR: &str = "LLM_API_KEY";

pub struct HttpBackend {
    endpoint: String,
    model: String,
    // Never printed or logged; the Debug impl below redacts it.
    api_key: String,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: String,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpBackend {
    /// Build a backend reading the credential from `LLM_API_KEY`.
    pub fn from_env(endpoint: String, model: String) -> Result<Self> {
        let api_key = std::env::var(API_KEY_VAR)
            .map_err(|_| Error::Config(format!("environment variable {API_KEY_VAR} not set")))?;
        Self::new(endpoint, model, api_key)
    }

    pub fn new(endpoint: String, model: String, api_key: String) -> Result<Self> {
        if endpoint.trim().is_empty() {
            return Err(Error::Config("http backend endpoint is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client build failed: {e}")))?;
        Ok(HttpBackend {
            endpoint,
            model,
            api_key,
            client,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        _role: PromptRole,
        prompt: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> std::result::Result<BackendResponse, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_output_tokens,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::transient(format!("transport: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::transient(format!("read body: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::fatal(format!(
                "http {status}: {}",
                head(&text)
            )));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::fatal(format!("malformed response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::fatal("response has no choices".to_string()))?;
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: None,
            completion_tokens: None,
        });
        Ok(BackendResponse {
            text: choice.message.content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

fn head(text: &str) -> String {
    text.chars().take(160).collect()
}
