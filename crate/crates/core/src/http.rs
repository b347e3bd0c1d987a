//! Blocking JSON-over-HTTP client with bearer auth, exponential backoff and
//! a shared request-rate limit.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    /// Shared across all threads using the client; `None` is unlimited.
    pub requests_per_second: Option<f64>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_cap_ms: 8_000,
            requests_per_second: None,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum HttpError {
    #[error("authentication rejected ({status}): {body}")]
    Auth { status: u16, body: String },
    #[error("endpoint unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("request rejected ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

#[derive(Debug)]
struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(rps: Option<f64>) -> Self {
        Self {
            interval: rps
                .filter(|r| *r > 0.0 && r.is_finite())
                .map(|r| Duration::from_secs_f64(1.0 / r)),
            next_slot: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let at = slot.map_or(now, |s| s.max(now));
            *slot = Some(at + interval);
            at - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Response body plus the number of retries it took.
#[derive(Debug, Clone)]
pub struct JsonResponse {
    pub body: Value,
    pub retries: u32,
}

#[derive(Debug)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    cfg: HttpConfig,
    token: Option<String>,
    limiter: RateLimiter,
}

impl JsonClient {
    pub fn new(cfg: HttpConfig, token: Option<String>) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| HttpError::BadResponse(format!("cannot build client: {e}")))?;
        Ok(Self {
            client,
            limiter: RateLimiter::new(cfg.requests_per_second),
            cfg,
            token,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn backoff(&self, retry: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .cfg
            .backoff_base_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.cfg.backoff_cap_ms);
        let cap = Duration::from_millis(self.cfg.backoff_cap_ms);
        retry_after.map_or(Duration::from_millis(exp), |ra| ra.min(cap))
    }

    pub fn post_json(&self, body: &Value) -> Result<JsonResponse, HttpError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                tracing::warn!(attempt, error = %last, "retrying request");
            }
            self.limiter.acquire();
            let mut req = self.client.post(&self.cfg.url).json(body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let retry_after = match req.send() {
                Err(e) => {
                    last = e.to_string();
                    None
                }
                Ok(resp) => {
                    let status = resp.status();
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .map(Duration::from_secs_f64);
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        let body = serde_json::from_str(&text)
                            .map_err(|e| HttpError::BadResponse(format!("{e}: {text}")))?;
                        return Ok(JsonResponse {
                            body,
                            retries: attempt,
                        });
                    }
                    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                        return Err(HttpError::Auth {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    if status != StatusCode::TOO_MANY_REQUESTS && !status.is_server_error() {
                        return Err(HttpError::Rejected {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    last = format!("status {status}");
                    retry_after
                }
            };
            if attempt < self.cfg.max_retries {
                thread::sleep(self.backoff(attempt, retry_after));
            }
        }
        Err(HttpError::Unavailable {
            attempts: self.cfg.max_retries + 1,
            last,
        })
    }
}
