//! Chat-completions client with record/replay cassettes.

mod cassette;
mod client;

pub use cassette::{load_cassette, Cassette, CassetteEntry, CassetteError, CASSETTE_SCHEMA_VERSION};
pub use client::{HttpTransport, LlmClient, RateLimiter, Transport, API_KEY_ENV};

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default cap on inline image payloads.
pub const DEFAULT_IMAGE_CAP: usize = 4 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub media_type: String,
    /// Base64 of the raw image bytes.
    pub data: String,
}

impl ImagePart {
    pub fn png(bytes: &[u8]) -> Self {
        Self { media_type: "image/png".into(), data: base64::engine::general_purpose::STANDARD.encode(bytes) }
    }

    pub fn decoded_len(&self) -> usize {
        self.data.len() / 4 * 3
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub image: Option<ImagePart>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            system: system.into(),
            user: user.into(),
            image: None,
            temperature: 0.0,
            max_tokens: 600,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_image(mut self, image: ImagePart) -> Self {
        self.image = Some(image);
        self
    }

    pub fn validate(&self, image_cap: usize) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if let Some(img) = &self.image {
            if img.decoded_len() > image_cap {
                return Err(LlmError::InvalidRequest(format!(
                    "image of ~{} bytes exceeds the {image_cap} byte cap",
                    img.decoded_len()
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the request without its timeout. Fields are hashed
    /// in a fixed order as length-prefixed UTF-8, so the value does not
    /// depend on platform or serializer settings.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |name: &str, value: &str| {
            for part in [name, value] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        };
        field("model", &self.model);
        field("system", &self.system);
        field("user", &self.user);
        match &self.image {
            Some(img) => {
                field("image.media_type", &img.media_type);
                field("image.data", &img.data);
            }
            None => field("image", ""),
        }
        field("temperature", &format!("{:?}", self.temperature));
        field("max_tokens", &self.max_tokens.to_string());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no cassette entry for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("client configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Server-suggested wait before retrying, when the error carries one.
    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            LlmError::RateLimited { retry_after } => *retry_after,
            _ => None,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Timeout(_)
                | LlmError::RateLimited { .. }
                | LlmError::Transport(_)
                | LlmError::Http { status: 500..=599, .. }
        )
    }
}
