//! Blocking JSON-over-HTTP client for the inference service.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::wire::Health;

/// Failure of a detector or segmenter backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("service returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("oracle detector needs ground truth for frame {0}")]
    MissingGroundTruth(usize),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether repeating the same request might succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status == 503 || *status >= 500,
            _ => false,
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightGuard { limit: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.limit.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: usize,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            max_in_flight: 4,
        }
    }
}

pub struct HttpClient {
    agent: ureq::Agent,
    base: String,
    retries: usize,
    limit: InFlightLimit,
}

impl HttpClient {
    pub fn new(cfg: &RemoteConfig) -> Result<Self, BackendError> {
        if !(cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "endpoint must be an http(s) URL, got {:?}",
                cfg.endpoint
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            base: cfg.endpoint.trim_end_matches('/').to_string(),
            retries: cfg.retries,
            limit: InFlightLimit::new(cfg.max_in_flight),
        })
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let mut attempt = 0;
        loop {
            let result = self.post_once(path, body);
            match result {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("{path}: {e}; retry {attempt}/{}", self.retries);
                    std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                }
                other => return other,
            }
        }
    }

    pub fn get_json<Resp: DeserializeOwned>(&self, path: &str) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base, path);
        let mut resp = self.agent.get(&url).call().map_err(|e| BackendError::Transport(e.to_string()))?;
        read_response(&mut resp)
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let _slot = self.limit.acquire();
        let url = format!("{}{}", self.base, path);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        read_response(&mut resp)
    }
}

fn read_response<Resp: DeserializeOwned>(resp: &mut ureq::http::Response<ureq::Body>) -> Result<Resp, BackendError> {
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(BackendError::Status { status, body });
    }
    resp.body_mut()
        .read_json::<Resp>()
        .map_err(|e| BackendError::Malformed(e.to_string()))
}

/// `GET /healthz`. A service still loading its model answers 503.
pub fn check_health(cfg: &RemoteConfig) -> Result<Health, BackendError> {
    HttpClient::new(cfg)?.get_json("/healthz")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn retryable_tags() {
        assert!(BackendError::Transport("x".into()).is_retryable());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Status { status: 400, body: String::new() }.is_retryable());
        assert!(!BackendError::Malformed("x".into()).is_retryable());
    }

    #[test]
    fn limit_bounds_concurrency() {
        let limit = Arc::new(InFlightLimit::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (limit, peak) = (limit.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = limit.acquire();
                    peak.fetch_max(limit.active(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limit.active(), 0);
    }

    #[test]
    fn rejects_non_http_endpoint() {
        assert!(matches!(
            HttpClient::new(&RemoteConfig::new("localhost:8000")),
            Err(BackendError::Config(_))
        ));
    }
}
