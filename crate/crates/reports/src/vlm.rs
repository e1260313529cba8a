//! Vision-language model backends: a deterministic mock and an
//! OpenAI-compatible chat-completions client.

use std::path::PathBuf;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};
use tfv_core::FrameKey;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompt::{Prompt, PromptPart};

pub const MOCK_MODEL_ID: &str = "mock-vlm-v1";
pub const DEFAULT_TIMEOUT_S: u64 = 120;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_CONCURRENCY: usize = 2;

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("vision-language model unavailable: {0}")]
    Unavailable(String),
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("image for {frame} [{channel}] unavailable: {message}")]
    Image {
        frame: FrameKey,
        channel: String,
        message: String,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Resolves prompt image references to encoded bytes and a media type.
pub trait ImageSource: Send + Sync {
    fn load(&self, frame: &FrameKey, channel: &str) -> Result<(Vec<u8>, &'static str), VlmError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmConfig {
    pub url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub mock: bool,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub concurrency: usize,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            url: None,
            model: None,
            api_key: None,
            mock: false,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_S),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            initial_backoff: Duration::from_millis(500),
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

impl VlmConfig {
    pub fn mock() -> Self {
        Self {
            mock: true,
            ..Self::default()
        }
    }

    /// Reads `TFV_VLM_URL`, `TFV_VLM_MODEL`, `TFV_VLM_API_KEY`,
    /// `TFV_VLM_MOCK` and `TFV_VLM_TIMEOUT_S`.
    pub fn from_env() -> Result<Self, VlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, VlmError> {
        let non_empty = |k: &str| get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let timeout = match non_empty("TFV_VLM_TIMEOUT_S") {
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|s| s.is_finite() && *s > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| VlmError::Config(format!("TFV_VLM_TIMEOUT_S must be a positive number, got {v:?}")))?,
            None => Duration::from_secs(DEFAULT_TIMEOUT_S),
        };
        Ok(Self {
            url: non_empty("TFV_VLM_URL"),
            model: non_empty("TFV_VLM_MODEL"),
            api_key: non_empty("TFV_VLM_API_KEY"),
            mock: matches!(non_empty("TFV_VLM_MOCK").as_deref(), Some("1" | "true" | "yes")),
            timeout,
            ..Self::default()
        })
    }
}

#[derive(Debug)]
enum Backend {
    Mock,
    Http(HttpBackend),
    Unconfigured,
}

#[derive(Debug)]
struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_attempts: u32,
    initial_backoff: Duration,
    permits: Semaphore,
}

#[derive(Debug)]
pub struct Vlm {
    backend: Backend,
}

impl Vlm {
    /// Mock mode wins over a configured URL; with neither, every request
    /// fails as unavailable.
    pub fn new(config: &VlmConfig) -> Result<Self, VlmError> {
        let backend = if config.mock {
            Backend::Mock
        } else if let Some(url) = &config.url {
            let client = reqwest::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| VlmError::Config(e.to_string()))?;
            Backend::Http(HttpBackend {
                client,
                endpoint: chat_endpoint(url),
                model: config.model.clone().unwrap_or_else(|| "default".into()),
                api_key: config.api_key.clone(),
                max_attempts: config.max_attempts.max(1),
                initial_backoff: config.initial_backoff,
                permits: Semaphore::new(config.concurrency.max(1)),
            })
        } else {
            Backend::Unconfigured
        };
        Ok(Self { backend })
    }

    pub fn mock() -> Self {
        Self { backend: Backend::Mock }
    }

    pub fn model_id(&self) -> &str {
        match &self.backend {
            Backend::Mock => MOCK_MODEL_ID,
            Backend::Http(h) => &h.model,
            Backend::Unconfigured => "unconfigured",
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock)
    }

    pub async fn complete(&self, prompt: &Prompt, images: &dyn ImageSource) -> Result<String, VlmError> {
        match &self.backend {
            Backend::Mock => {
                // fail the same way a real request would on missing images
                for (frame, channel) in prompt.images() {
                    images.load(frame, channel)?;
                }
                Ok(mock_text(prompt))
            }
            Backend::Http(h) => h.complete(prompt, images).await,
            Backend::Unconfigured => Err(VlmError::Unavailable(
                "no endpoint configured; set TFV_VLM_URL or TFV_VLM_MOCK=1".into(),
            )),
        }
    }
}

fn chat_endpoint(url: &str) -> String {
    let base = url.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

/// Deterministic stand-in text: depends only on the prompt content.
pub fn mock_text(prompt: &Prompt) -> String {
    let digest = prompt.digest();
    let n_images = prompt.images().count();
    let annotations = prompt
        .texts()
        .filter(|t| t.starts_with("Expert annotation"))
        .count();
    let target = prompt
        .images()
        .last()
        .map(|(f, c)| format!("{f} [{c}]"))
        .unwrap_or_else(|| "no image".into());
    format!(
        "Mock description {} of {target}: {n_images} images, {annotations} expert annotations as context.",
        &digest[..16]
    )
}

/// OpenAI-style chat request body with images inlined as base64 data URLs.
pub fn chat_payload(model: &str, prompt: &Prompt, images: &dyn ImageSource) -> Result<Value, VlmError> {
    let mut content = Vec::with_capacity(prompt.parts.len());
    for part in &prompt.parts {
        content.push(match part {
            PromptPart::Text { text } => json!({ "type": "text", "text": text }),
            PromptPart::Image { frame, channel } => {
                let (bytes, media) = images.load(frame, channel)?;
                json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{media};base64,{}", BASE64.encode(bytes)) },
                })
            }
        });
    }
    Ok(json!({
        "model": model,
        "temperature": 0,
        "messages": [
            { "role": "system", "content": prompt.system },
            { "role": "user", "content": content },
        ],
    }))
}

fn parse_reply(body: &Value) -> Result<String, VlmError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| VlmError::MalformedResponse("missing choices[0].message.content".into()))?;
    let text = match content {
        Value::String(s) => s.clone(),
        // some servers answer with a list of content parts
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        other => return Err(VlmError::MalformedResponse(format!("unexpected content {other}"))),
    };
    if text.trim().is_empty() {
        return Err(VlmError::MalformedResponse("empty completion".into()));
    }
    Ok(text.trim().to_string())
}

enum Attempt {
    Retry(String),
    Fatal(VlmError),
}

impl HttpBackend {
    async fn complete(&self, prompt: &Prompt, images: &dyn ImageSource) -> Result<String, VlmError> {
        let payload = chat_payload(&self.model, prompt, images)?;
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| VlmError::Unavailable("client shut down".into()))?;
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.send(&payload).await {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, endpoint = %self.endpoint, error = %msg, "model request failed");
                    last = msg;
                    if attempt < self.max_attempts {
                        tokio::time::sleep(backoff).await;
                        backoff *= 2;
                    }
                }
            }
        }
        Err(VlmError::Unavailable(format!(
            "{} attempts failed, last error: {last}",
            self.max_attempts
        )))
    }

    async fn send(&self, payload: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(Attempt::Fatal(VlmError::Unavailable(format!("HTTP {status}: {body}"))));
        }
        let body: Value = resp
            .json()
            .await
            .map_err(|e| Attempt::Fatal(VlmError::MalformedResponse(e.to_string())))?;
        parse_reply(&body).map_err(Attempt::Fatal)
    }
}

/// Loads images straight from files.
pub struct FileImages<F>(pub F);

impl<F> ImageSource for FileImages<F>
where
    F: Fn(&FrameKey, &str) -> Option<PathBuf> + Send + Sync,
{
    fn load(&self, frame: &FrameKey, channel: &str) -> Result<(Vec<u8>, &'static str), VlmError> {
        let err = |message: String| VlmError::Image {
            frame: frame.clone(),
            channel: channel.to_string(),
            message,
        };
        let path = (self.0)(frame, channel).ok_or_else(|| err("unknown frame".into()))?;
        let bytes = std::fs::read(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Ok((bytes, media_type(&path)))
    }
}

pub fn media_type(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}
