//! Chat transports: the HTTP client for an OpenAI-compatible endpoint and
//! the trait the deterministic mocks implement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport misconfigured: {0}")]
    Config(String),
    #[error("request failed: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Response(String),
}

pub trait ChatTransport {
    /// Returns the assistant's reply text for the given conversation.
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, TransportError>;

    /// Short label recorded in run reports.
    fn descriptor(&self) -> String;
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Client for `POST {base}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpTransport { base_url: base_url.into(), model: model.into(), api_key: None, temperature: 0.0 }
    }

    /// Reads `RAPP_LLM_BASE_URL`, `RAPP_LLM_MODEL` and `RAPP_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, TransportError> {
        let var = |k: &str| std::env::var(k).map_err(|_| TransportError::Config(format!("{k} is not set")));
        let mut t = HttpTransport::new(var("RAPP_LLM_BASE_URL")?, var("RAPP_LLM_MODEL")?);
        t.api_key = std::env::var("RAPP_LLM_API_KEY").ok();
        Ok(t)
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let mut req = ureq::post(&self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(ChatRequest { model: &self.model, messages, temperature: self.temperature })
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let body: ChatResponse = resp.body_mut().read_json().map_err(|e| TransportError::Response(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Response("no choices in response".into()))
    }

    fn descriptor(&self) -> String {
        format!("http:{}", self.model)
    }
}
