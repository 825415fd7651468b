use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the HTTP backend credential.
pub const API_KEY_ENV: &str = "TACTILE_EDIT_API_KEY";

/// One edit: a base image, an instruction, and the requested output side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditRequest {
    pub image_png: Vec<u8>,
    pub prompt: String,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditResponse {
    pub image: Vec<u8>,
    pub request_id: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::RateLimited(_) | BackendError::Transient(_))
    }
}

pub trait EditBackend: Send + Sync {
    /// Recorded in every job's metadata.
    fn id(&self) -> &str;

    fn submit(&self, request: &EditRequest) -> Result<EditResponse, BackendError>;
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Offline backend that returns the base image unchanged.
///
/// The request id is derived from the image and prompt, so runs are
/// reproducible. Failures can be injected for the first few submissions.
#[derive(Debug, Default)]
pub struct MockBackend {
    fail_first: usize,
    failure: Option<BackendError>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn failing(times: usize, error: BackendError) -> Self {
        MockBackend {
            fail_first: times,
            failure: Some(error),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EditBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn submit(&self, request: &EditRequest) -> Result<EditResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_first {
            return Err(self.failure.clone().expect("failure configured"));
        }
        let mut h = Sha256::new();
        h.update(&request.image_png);
        h.update([0]);
        h.update(request.prompt.as_bytes());
        Ok(EditResponse {
            image: request.image_png.clone(),
            request_id: format!("mock-{}", &hex::encode(h.finalize())[..16]),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Sent as `<n>x<n>`; when unset the request side is used.
    pub size: Option<String>,
    pub timeout: Duration,
    /// Minimum spacing between requests from one client.
    pub min_interval: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/images/edits".into(),
            model: "gpt-image-1".into(),
            size: None,
            timeout: Duration::from_secs(180),
            min_interval: Duration::from_millis(1000),
        }
    }
}

/// Multipart client for an image-edit endpoint that answers with
/// `{"data": [{"b64_json": ...}]}`.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    last_request: Mutex<Option<Instant>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key: api_key.filter(|k| !k.trim().is_empty()),
            client,
            last_request: Mutex::new(None),
        })
    }

    /// Reads the key from [`API_KEY_ENV`]. A missing key is reported on the
    /// first submission, before anything is sent.
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().unwrap();
        if let Some(t) = *last {
            let wait = self.config.min_interval.saturating_sub(t.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }
}

fn parse_edit_body(body: &str) -> Result<Vec<u8>, BackendError> {
    let json: serde_json::Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let b64 = json
        .pointer("/data/0/b64_json")
        .and_then(|v| v.as_str())
        .ok_or_else(|| BackendError::Malformed("missing data[0].b64_json".into()))?;
    base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| BackendError::Malformed(format!("bad base64 image: {e}")))
}

impl EditBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn submit(&self, request: &EditRequest) -> Result<EditResponse, BackendError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| BackendError::Auth(format!("{API_KEY_ENV} is not set")))?;
        self.throttle();
        let size = self
            .config
            .size
            .clone()
            .unwrap_or_else(|| format!("{0}x{0}", request.size));
        let image = reqwest::blocking::multipart::Part::bytes(request.image_png.clone())
            .file_name("image.png")
            .mime_str("image/png")
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        let form = reqwest::blocking::multipart::Form::new()
            .text("model", self.config.model.clone())
            .text("prompt", request.prompt.clone())
            .text("size", size)
            .part("image", image);
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .multipart(form)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let request_id = resp
            .headers()
            .get("x-request-id")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(body)),
            429 => return Err(BackendError::RateLimited(body)),
            500..=599 => return Err(BackendError::Transient(format!("status {status}: {body}"))),
            _ => return Err(BackendError::Rejected { status, body }),
        }
        let image = parse_edit_body(&body)?;
        let request_id = request_id.unwrap_or_else(|| format!("sha256-{}", &hex::encode(Sha256::digest(&image))[..16]));
        Ok(EditResponse { image, request_id })
    }
}

/// Exponential backoff: retry `n` waits `base_delay · 2^(n−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub response: EditResponse,
    pub attempts: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{last} (after {attempts} attempts)")]
pub struct SubmitError {
    pub attempts: u32,
    pub last: BackendError,
}

/// Submits with retries on rate limits and transient failures.
pub fn submit_with_retry(
    backend: &dyn EditBackend,
    request: &EditRequest,
    policy: &RetryPolicy,
) -> Result<Submission, SubmitError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match backend.submit(request) {
            Ok(response) => return Ok(Submission { response, attempts }),
            Err(e) if e.is_retryable() && attempts <= policy.max_retries => {
                let wait = policy.delay(attempts);
                log::warn!("edit attempt {attempts} failed ({e}); retrying in {wait:?}");
                std::thread::sleep(wait);
            }
            Err(last) => return Err(SubmitError { attempts, last }),
        }
    }
}
