//! HTTP clients for OpenAI-compatible chat, image and embedding endpoints,
//! plus a minimal JSON protocol for a joint text–image embedder.

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, GeneratedImage, ImageGenerator, ProviderError, Role};
use crate::embedding::{EmbeddingError, JointEmbedder, JointInput, SentenceEmbedder};

/// Connection settings, normally read from the environment.
#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub api_key: String,
    pub base_url: String,
    pub chat_model: String,
    pub image_model: String,
    pub embed_model: String,
    /// Joint text–image embedder; `POST {"text"}` or `{"image_base64"}`,
    /// answering `{"embedding": [...]}`.
    pub joint_url: Option<String>,
    pub timeout: Duration,
}

impl LiveConfig {
    /// `PROVIDER_API_KEY` (required), `PROVIDER_BASE_URL`,
    /// `PROVIDER_CHAT_MODEL`, `PROVIDER_IMAGE_MODEL`, `PROVIDER_EMBED_MODEL`,
    /// `JOINT_EMBED_URL`, `PROVIDER_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let var = |k: &str, default: &str| std::env::var(k).unwrap_or_else(|_| default.to_owned());
        let api_key = std::env::var("PROVIDER_API_KEY")
            .map_err(|_| ProviderError::Validation("PROVIDER_API_KEY is not set".into()))?;
        let timeout = var("PROVIDER_TIMEOUT_SECS", "120")
            .parse()
            .map_err(|_| ProviderError::Validation("PROVIDER_TIMEOUT_SECS must be an integer".into()))?;
        Ok(Self {
            api_key,
            base_url: var("PROVIDER_BASE_URL", "https://api.openai.com/v1").trim_end_matches('/').to_owned(),
            chat_model: var("PROVIDER_CHAT_MODEL", "gpt-4o"),
            image_model: var("PROVIDER_IMAGE_MODEL", "dall-e-3"),
            embed_model: var("PROVIDER_EMBED_MODEL", "text-embedding-3-small"),
            joint_url: std::env::var("JOINT_EMBED_URL").ok(),
            timeout: Duration::from_secs(timeout),
        })
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

fn transport(e: reqwest::Error) -> ProviderError {
    ProviderError::Transport(e.to_string())
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(transport)?;
        Ok(Self { config, client })
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(transport)?;
        let status = resp.status();
        let payload: Value = resp.json().map_err(transport)?;
        if status.is_success() {
            return Ok(payload);
        }
        let message = payload
            .pointer("/error/message")
            .and_then(Value::as_str)
            .unwrap_or("no error message")
            .to_owned();
        let code = payload.pointer("/error/code").and_then(Value::as_str).unwrap_or("");
        if status.as_u16() == 400 && (code.contains("content_policy") || code.contains("safety")) {
            Err(ProviderError::Rejected(message))
        } else {
            Err(ProviderError::Transport(format!("HTTP {status}: {message}")))
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({"model": self.config.embed_model, "input": text});
        let reply = self.post(&format!("{}/embeddings", self.config.base_url), &body)?;
        floats(reply.pointer("/data/0/embedding"))
    }

    fn joint(&self, body: Value) -> Result<Vec<f64>, ProviderError> {
        let url = self
            .config
            .joint_url
            .as_deref()
            .ok_or_else(|| ProviderError::Validation("JOINT_EMBED_URL is not set".into()))?;
        let reply = self.post(url, &body)?;
        floats(reply.get("embedding"))
    }
}

fn floats(v: Option<&Value>) -> Result<Vec<f64>, ProviderError> {
    let raw = v.cloned().unwrap_or(Value::Null);
    serde_json::from_value(raw.clone()).map_err(|e| ProviderError::Schema {
        message: format!("embedding is not a number array: {e}"),
        raw: raw.to_string(),
    })
}

impl ChatProvider for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let last_user = request.messages.iter().rposition(|m| m.role == Role::User);
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| match (&request.image, Some(i) == last_user) {
                (Some(img), true) => {
                    let data = base64::engine::general_purpose::STANDARD.encode(&img.bytes);
                    json!({"role": m.role, "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {"url": format!("data:{};base64,{data}", img.image.media_type)}}
                    ]})
                }
                _ => json!({"role": m.role, "content": m.content}),
            })
            .collect();
        let body = json!({"model": self.config.chat_model, "messages": messages, "seed": request.seed});
        let reply = self.post(&format!("{}/chat/completions", self.config.base_url), &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Schema {
                message: "completion has no message content".into(),
                raw: reply.to_string(),
            })
    }
}

impl ImageGenerator for LiveProvider {
    fn generate(&self, prompt: &str, _seed: u64) -> Result<GeneratedImage, ProviderError> {
        let body = json!({
            "model": self.config.image_model,
            "prompt": prompt,
            "size": "1024x1024",
            "response_format": "b64_json",
        });
        let reply = self.post(&format!("{}/images/generations", self.config.base_url), &body)?;
        let data = reply
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Schema {
                message: "image reply has no b64_json".into(),
                raw: reply.to_string(),
            })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| ProviderError::Schema {
                message: format!("invalid base64 image: {e}"),
                raw: String::new(),
            })?;
        Ok(GeneratedImage {
            bytes,
            extension: "png".into(),
            media_type: "image/png".into(),
            width: 1024,
            height: 1024,
        })
    }
}

impl SentenceEmbedder for LiveProvider {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        self.embed_text(text).map_err(|e| EmbeddingError::Provider(e.to_string()))
    }
}

impl JointEmbedder for LiveProvider {
    fn embed(&self, input: JointInput<'_>) -> Result<Vec<f64>, EmbeddingError> {
        let body = match input {
            JointInput::Text(text) => json!({"text": text}),
            JointInput::Image { image, bytes } => json!({
                "image_base64": base64::engine::general_purpose::STANDARD.encode(bytes),
                "media_type": image.media_type,
            }),
        };
        self.joint(body).map_err(|e| EmbeddingError::Provider(e.to_string()))
    }
}
