//! Retrying JSON-over-HTTP client shared by the three roles.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde_json::Value;
use vla_core::{AgentError, ImageId};

use crate::config::AgentEndpointConfig;
use crate::envelope::{AgentRole, AttemptRecord, Transcript};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    Timeout(String),
    Connect(String),
}

/// A single POST. Implemented over ureq, and by scripted fakes in tests.
pub trait Exchange: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<RawResponse, TransportError>;
}

pub struct UreqExchange {
    agent: ureq::Agent,
}

impl UreqExchange {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Exchange for UreqExchange {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        _timeout: Duration,
    ) -> Result<RawResponse, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(format!("timed out ({t})")),
            other => TransportError::Connect(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(t) => TransportError::Timeout(format!("timed out reading body ({t})")),
            other => TransportError::Connect(other.to_string()),
        })?;
        Ok(RawResponse { status, body })
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore lock");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.freed.notify_one();
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Backoff before retry `n` (1-based): `base * 2^(n-1)`, stretched by up to
/// a quarter for jitter.
pub fn backoff_delay(base_ms: u64, retry: u32, jitter: f64) -> Duration {
    let nominal = base_ms as f64 * 2f64.powi(retry.saturating_sub(1) as i32);
    Duration::from_secs_f64(nominal * (1.0 + 0.25 * jitter.clamp(0.0, 1.0)) / 1000.0)
}

enum Verdict {
    Done(Value),
    Retry(String),
    Fatal(AgentError),
}

fn parse_body(body: &str) -> Value {
    serde_json::from_str(body).unwrap_or_else(|_| Value::String(body.to_string()))
}

/// One configured remote endpoint: exchange, retry policy, concurrency cap
/// and transcript.
pub struct Endpoint {
    role: AgentRole,
    base_url: String,
    cfg: AgentEndpointConfig,
    credential: Option<String>,
    exchange: Box<dyn Exchange>,
    permits: Semaphore,
    transcript: Arc<Transcript>,
    sleeper: Sleeper,
}

impl Endpoint {
    pub fn new(
        role: AgentRole,
        cfg: AgentEndpointConfig,
        credential: Option<String>,
        transcript: Arc<Transcript>,
    ) -> Self {
        let exchange = Box::new(UreqExchange::new(cfg.timeout()));
        Self::with_exchange(role, cfg, credential, transcript, exchange)
    }

    pub fn with_exchange(
        role: AgentRole,
        cfg: AgentEndpointConfig,
        credential: Option<String>,
        transcript: Arc<Transcript>,
        exchange: Box<dyn Exchange>,
    ) -> Self {
        let base_url = cfg.url.clone().unwrap_or_default().trim_end_matches('/').to_string();
        Self {
            role,
            base_url,
            permits: Semaphore::new(cfg.max_concurrency.max(1)),
            cfg,
            credential,
            exchange,
            transcript,
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn role(&self) -> AgentRole {
        self.role
    }

    pub fn config(&self) -> &AgentEndpointConfig {
        &self.cfg
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }

    pub fn url_for(&self, route: &str) -> String {
        format!("{}{}", self.base_url, route)
    }

    fn judge(&self, url: &str, outcome: &Result<RawResponse, TransportError>) -> Verdict {
        match outcome {
            Err(TransportError::Timeout(r)) | Err(TransportError::Connect(r)) => Verdict::Retry(r.clone()),
            Ok(resp) => match resp.status {
                200..=299 => match serde_json::from_str(&resp.body) {
                    Ok(v) => Verdict::Done(v),
                    Err(e) => Verdict::Fatal(AgentError::Protocol {
                        message: format!("{url} returned invalid JSON: {e}"),
                        raw: resp.body.clone(),
                    }),
                },
                401 | 403 => Verdict::Fatal(AgentError::Credential {
                    endpoint: url.to_string(),
                    reason: format!("HTTP {} (check {})", resp.status, self.cfg.key_env(self.role)),
                }),
                429 | 500..=599 => Verdict::Retry(format!("HTTP {}", resp.status)),
                s => Verdict::Fatal(AgentError::Protocol {
                    message: format!("{url} answered HTTP {s}"),
                    raw: resp.body.clone(),
                }),
            },
        }
    }

    /// POSTs `body` to `route`, retrying transient failures. Every attempt
    /// becomes one envelope.
    pub fn post(&self, image_id: ImageId, purpose: &str, route: &str, body: &Value) -> Result<Value, AgentError> {
        let url = self.url_for(route);
        let ticket = self.transcript.open_call(image_id, self.role, purpose, &url);
        let mut headers = Vec::new();
        if let Some(key) = &self.credential {
            headers.push(self.cfg.auth_pair(key));
        }
        let text = body.to_string();
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let delay = backoff_delay(self.cfg.backoff_base_ms, attempt - 1, rand::thread_rng().gen());
                log::debug!("{url}: retry {} in {:?} after {last}", attempt - 1, delay);
                (self.sleeper)(delay);
            }
            let sent = self.transcript.now(image_id);
            let outcome = {
                let _permit = self.permits.acquire();
                self.exchange.post(&url, &headers, &text, self.cfg.timeout())
            };
            let verdict = self.judge(&url, &outcome);
            let mut record = AttemptRecord::default();
            match &outcome {
                Ok(resp) => {
                    record.status = Some(resp.status);
                    record.response = Some(parse_body(&resp.body));
                }
                Err(TransportError::Timeout(r)) | Err(TransportError::Connect(r)) => record.error = Some(r.clone()),
            }
            match verdict {
                Verdict::Done(v) => {
                    self.transcript.record(&ticket, attempt, body, sent, record);
                    return Ok(v);
                }
                Verdict::Fatal(err) => {
                    record.error.get_or_insert_with(|| err.to_string());
                    self.transcript.record(&ticket, attempt, body, sent, record);
                    return Err(err);
                }
                Verdict::Retry(reason) => {
                    record.error.get_or_insert_with(|| reason.clone());
                    self.transcript.record(&ticket, attempt, body, sent, record);
                    last = reason;
                }
            }
        }
        Err(AgentError::Unavailable {
            endpoint: url,
            attempts,
            reason: last,
        })
    }
}
