use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendDescriptor, BackendKind, MllmBackend, MllmRequest, PromptPart};
use crate::error::{Error, Result};

/// Environment variable holding the provider API key.
pub const API_KEY_ENV: &str = "THINKFIRST_MLLM_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";

const NAME: &str = "remote";

/// Chat-completions client for a hosted multimodal model.
pub struct RemoteMllm {
    endpoint: String,
    model: String,
    api_key: String,
    timeout: Duration,
    // built lazily so the blocking client is created on the calling thread
    client: OnceLock<reqwest::blocking::Client>,
}

impl RemoteMllm {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            client: OnceLock::new(),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(endpoint, model, key))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// JSON body sent to the chat-completions endpoint.
    pub fn request_body(&self, request: &MllmRequest) -> Value {
        let content: Vec<Value> = request
            .parts()
            .iter()
            .map(|part| match part {
                PromptPart::Text(text) => json!({"type": "text", "text": text}),
                PromptPart::Image(img) => {
                    let data = base64::engine::general_purpose::STANDARD.encode(img.bytes());
                    json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{data}", img.format().mime())}
                    })
                }
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": request.temperature(),
            "max_tokens": request.max_output_tokens(),
            "messages": [
                {"role": "system", "content": request.system_context()},
                {"role": "user", "content": content},
            ],
        })
    }

    fn client(&self) -> Result<&reqwest::blocking::Client> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::backend(NAME, e))?;
        Ok(self.client.get_or_init(|| client))
    }
}

/// Pulls the assistant text out of a chat-completions response.
pub(crate) fn extract_content(body: &Value) -> Result<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::backend(NAME, "response has no choices[0].message.content"))
}

fn provider_message(status: reqwest::StatusCode, body: &str) -> String {
    let detail = serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect());
    format!("HTTP {status}: {detail}")
}

impl MllmBackend for RemoteMllm {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let response = self
            .client()?
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(request))
            .send()
            .map_err(|e| Error::backend(NAME, e))?;
        let status = response.status();
        let text = response.text().map_err(|e| Error::backend(NAME, e))?;
        if !status.is_success() {
            return Err(Error::backend(NAME, provider_message(status, &text)));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| Error::backend(NAME, format!("malformed response: {e}")))?;
        extract_content(&body)
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(NAME, BackendKind::Mllm, true)
            .with("endpoint", &self.endpoint)
            .with("model", &self.model)
    }

    fn health(&self) -> Result<()> {
        if self.api_key.is_empty() {
            return Err(Error::Config(format!("{API_KEY_ENV} is empty")));
        }
        Ok(())
    }
}
