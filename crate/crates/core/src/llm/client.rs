use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Cassette, CassetteEntry, ChatRequest, LlmError, DEFAULT_IMAGE_CAP};

/// Environment variable holding the bearer token for live calls.
pub const API_KEY_ENV: &str = "SUCTION_LLM_API_KEY";

/// Something that turns a request into assistant text.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// Chat-completions over HTTP(S).
pub struct HttpTransport {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    /// Reads the token from [`API_KEY_ENV`].
    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    pub fn body(request: &ChatRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": request.user})];
        if let Some(img) = &request.image {
            content.push(json!({"type": "image_url", "image_url": {"url": img.data_url()}}));
        }
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
        })
    }
}

fn parse_retry_after(value: Option<&str>) -> Option<Duration> {
    let v = value?.trim();
    v.parse::<f64>().ok().filter(|s| s.is_finite() && *s >= 0.0).map(Duration::from_secs_f64)
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url).timeout(request.timeout).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match call.send_string(&Self::body(request).to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(429, r)) => {
                return Err(LlmError::RateLimited { retry_after: parse_retry_after(r.header("Retry-After")) })
            }
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(LlmError::Http { status, body: body.chars().take(500).collect() });
            }
            Err(ureq::Error::Transport(t)) => {
                let text = t.to_string();
                if text.contains("timed out") || text.contains("Timeout") {
                    return Err(LlmError::Timeout(request.timeout));
                }
                return Err(LlmError::Transport(text));
            }
        };
        let text = response.into_string().map_err(|e| LlmError::Malformed(e.to_string()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))
    }
}

/// Token bucket: `burst` tokens, refilled at `per_second`.
pub struct RateLimiter {
    burst: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(burst: u32, per_second: f64) -> Self {
        let burst = f64::from(burst.max(1));
        Self { burst, per_second: per_second.max(1e-6), state: Mutex::new((burst, Instant::now())) }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("limiter lock");
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.per_second).min(self.burst);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

enum Mode {
    Live { transport: Box<dyn Transport>, limiter: RateLimiter, recorder: Option<Mutex<Cassette>> },
    Replay { entries: HashMap<String, String> },
}

/// Shareable client. Replay mode never touches the network.
pub struct LlmClient {
    mode: Mode,
    image_cap: usize,
    network_calls: AtomicUsize,
}

impl LlmClient {
    pub fn live(transport: Box<dyn Transport>, limiter: RateLimiter) -> Self {
        Self {
            mode: Mode::Live { transport, limiter, recorder: None },
            image_cap: DEFAULT_IMAGE_CAP,
            network_calls: AtomicUsize::new(0),
        }
    }

    /// Live client that appends every successful exchange to a cassette.
    pub fn recording(transport: Box<dyn Transport>, limiter: RateLimiter, into: Cassette) -> Self {
        Self {
            mode: Mode::Live { transport, limiter, recorder: Some(Mutex::new(into)) },
            image_cap: DEFAULT_IMAGE_CAP,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn replay(cassette: &Cassette) -> Self {
        let entries = cassette.entries.iter().map(|e| (e.fingerprint.clone(), e.response.clone())).collect();
        Self { mode: Mode::Replay { entries }, image_cap: DEFAULT_IMAGE_CAP, network_calls: AtomicUsize::new(0) }
    }

    pub fn with_image_cap(mut self, bytes: usize) -> Self {
        self.image_cap = bytes;
        self
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.mode, Mode::Replay { .. })
    }

    /// Transport calls made so far (always zero in replay mode).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate(self.image_cap)?;
        match &self.mode {
            Mode::Replay { entries } => {
                let fp = request.fingerprint();
                entries.get(&fp).cloned().ok_or(LlmError::ReplayMiss { fingerprint: fp })
            }
            Mode::Live { transport, limiter, recorder } => {
                limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::Relaxed);
                let started = Instant::now();
                let text = transport.send(request)?;
                if let Some(rec) = recorder {
                    let mut cassette = rec.lock().expect("recorder lock");
                    let fp = request.fingerprint();
                    if cassette.get(&fp).is_none() {
                        cassette.entries.push(CassetteEntry {
                            fingerprint: fp,
                            response: text.clone(),
                            latency_ms: started.elapsed().as_millis() as u64,
                            note: None,
                        });
                    }
                }
                Ok(text)
            }
        }
    }

    /// Snapshot of the recorded cassette, if recording.
    pub fn recorded(&self) -> Option<Cassette> {
        match &self.mode {
            Mode::Live { recorder: Some(rec), .. } => Some(rec.lock().expect("recorder lock").clone()),
            _ => None,
        }
    }
}
