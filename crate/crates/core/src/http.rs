//! Blocking JSON-over-HTTP transport with bounded retries.
//!
//! All remote clients (agents, embedding, generation) go through the
//! [`Transport`] trait so tests can substitute scripted or failing stubs.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok_json(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into().into_bytes(),
        }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &[u8],
        bearer: Option<&str>,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Largest response body accepted (base64 images and attention dumps).
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Default, Clone)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &[u8],
        bearer: Option<&str>,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(map_ureq_error)?;
        Ok(HttpResponse { status, body })
    }
}

fn map_ureq_error(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(e) => TransportError::Io(e.to_string()),
        other => TransportError::Connect(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }

    /// Same retry count with no sleeping between attempts.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(16)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CallError {
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("authorization rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

/// POST with at most `1 + policy.max_retries` transport attempts.
///
/// Retries on transport failures and on 408/429/5xx. Returns the first 2xx
/// response; 401/403 map to [`CallError::Auth`] without retrying.
pub fn post_with_retry(
    transport: &dyn Transport,
    url: &str,
    body: &[u8],
    bearer: Option<&str>,
    timeout: Duration,
    policy: RetryPolicy,
) -> Result<HttpResponse, CallError> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let last = match transport.post_json(url, body, bearer, timeout) {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
            Ok(resp) if resp.status == 401 || resp.status == 403 => {
                return Err(CallError::Auth(resp.status))
            }
            Ok(resp) if retryable_status(resp.status) => {
                let err = CallError::Status {
                    status: resp.status,
                    body: truncate(&resp.text(), 512),
                };
                if attempt > policy.max_retries {
                    return Err(err);
                }
                err.to_string()
            }
            Ok(resp) => {
                return Err(CallError::Status {
                    status: resp.status,
                    body: truncate(&resp.text(), 512),
                })
            }
            Err(e) => {
                if attempt > policy.max_retries {
                    return Err(CallError::Transport {
                        attempts: attempt,
                        last: e.to_string(),
                    });
                }
                e.to_string()
            }
        };
        tracing::debug!(url, attempt, "retrying after: {last}");
        let delay = policy.delay(attempt - 1);
        if !delay.is_zero() {
            thread::sleep(delay);
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

pub struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.sem.cv.notify_one();
    }
}

/// Transport stubs for tests and offline runs.
pub mod stub {
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    use std::time::Duration;

    use super::{HttpResponse, Transport, TransportError};

    /// Fails every call and counts how often it was used.
    #[derive(Debug, Default)]
    pub struct FailingTransport {
        calls: AtomicUsize,
    }

    impl FailingTransport {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Transport for FailingTransport {
        fn post_json(
            &self,
            _url: &str,
            _body: &[u8],
            _bearer: Option<&str>,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(TransportError::Connect("network disabled".into()))
        }
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct RecordedRequest {
        pub url: String,
        pub body: Vec<u8>,
        pub bearer: Option<String>,
    }

    impl RecordedRequest {
        pub fn json(&self) -> serde_json::Value {
            serde_json::from_slice(&self.body).expect("recorded body is JSON")
        }
    }

    /// Replays queued responses in order and records each request.
    #[derive(Debug, Default)]
    pub struct ScriptedTransport {
        queue: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        requests: Mutex<Vec<RecordedRequest>>,
    }

    impl ScriptedTransport {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn push(&self, resp: Result<HttpResponse, TransportError>) -> &Self {
            self.queue.lock().unwrap().push_back(resp);
            self
        }

        pub fn push_ok(&self, body: impl Into<String>) -> &Self {
            self.push(Ok(HttpResponse::ok_json(body)))
        }

        pub fn push_status(&self, status: u16, body: impl Into<String>) -> &Self {
            self.push(Ok(HttpResponse {
                status,
                body: body.into().into_bytes(),
            }))
        }

        pub fn requests(&self) -> Vec<RecordedRequest> {
            self.requests.lock().unwrap().clone()
        }
    }

    impl Transport for ScriptedTransport {
        fn post_json(
            &self,
            url: &str,
            body: &[u8],
            bearer: Option<&str>,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            self.requests.lock().unwrap().push(RecordedRequest {
                url: url.to_string(),
                body: body.to_vec(),
                bearer: bearer.map(str::to_string),
            });
            self.queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(TransportError::Connect("script exhausted".into())))
        }
    }
}
