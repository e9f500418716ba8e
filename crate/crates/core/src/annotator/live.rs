//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, BackendError, BackendKind, ChatRequest, Completion, RequestContext, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub timeout: Duration,
    /// Optional `detail` hint for the image part; omitted when `None`.
    pub image_detail: Option<String>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            timeout: Duration::from_secs(60),
            image_detail: None,
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    agent: Agent,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.config.endpoint)
            .finish_non_exhaustive()
    }
}

impl LiveBackend {
    pub fn new(config: LiveConfig, api_key: String) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, api_key, agent }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(config: LiveConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(config, key))
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        request_body(request, self.config.image_detail.as_deref())
    }
}

pub(crate) fn request_body(request: &ChatRequest, detail: Option<&str>) -> Value {
    let mut image_url = json!({ "url": request.image_payload });
    if let Some(d) = detail {
        image_url["detail"] = json!(d);
    }
    json!({
        "model": request.model_id,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
        "messages": [
            { "role": "system", "content": request.system_text },
            {
                "role": "user",
                "content": [
                    { "type": "text", "text": request.user_text },
                    { "type": "image_url", "image_url": image_url }
                ]
            }
        ]
    })
}

pub(crate) fn parse_response(body: &str) -> Result<Completion, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))?;
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::Fatal("response has no message content".into()))?
        .trim()
        .to_string();
    let usage = match (
        v["usage"]["prompt_tokens"].as_u64(),
        v["usage"]["completion_tokens"].as_u64(),
    ) {
        (Some(i), Some(o)) => Some(Usage {
            input_tokens: i,
            output_tokens: o,
        }),
        _ => None,
    };
    Ok(Completion { content, usage })
}

pub(crate) fn classify_status(status: u16, body: &str) -> BackendError {
    let snippet: String = body.chars().take(200).collect();
    let msg = format!("HTTP {status}: {snippet}");
    match status {
        401 | 403 => BackendError::Auth(msg),
        408 | 409 | 425 | 429 | 500..=599 => BackendError::Transient(msg),
        _ => BackendError::Fatal(msg),
    }
}

impl Backend for LiveBackend {
    fn complete(&self, request: &ChatRequest, _ctx: &RequestContext<'_>) -> Result<Completion, BackendError> {
        let body = self.request_body(request);
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => classify_status(code, ""),
                other => BackendError::Transient(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        parse_response(&text)
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }
}
