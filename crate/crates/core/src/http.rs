//! Blocking JSON-over-HTTP with exponential backoff, shared by the remote
//! embedding, text-to-graph and chat-completions clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.initial_delay_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_delay_ms as f64) as u64)
    }
}

#[derive(Debug)]
enum Failure {
    Transient(String),
    Fatal(String),
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
            api_key,
            retry,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, Failure> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
                Failure::Transient(format!("HTTP {code}"))
            }
            ureq::Error::StatusCode(code) => Failure::Fatal(format!("HTTP {code}")),
            other => Failure::Transient(other.to_string()),
        })?;
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Failure::Fatal(format!("malformed response body: {e}")))
    }

    /// POSTs `body`, retrying transient failures (connection errors, 429 and
    /// 5xx) per the retry policy. `context` is attached to the final error.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B, context: &str) -> Result<R> {
        let mut attempt = 0;
        loop {
            match self.attempt(body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(msg)) => {
                    return Err(Error::transport(context, format!("{}: {msg}", self.url)))
                }
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(Error::transport(
                            context,
                            format!(
                                "{}: {msg} (gave up after {} attempts)",
                                self.url,
                                attempt + 1
                            ),
                        ));
                    }
                    let wait = self.retry.delay(attempt);
                    log::warn!("{context}: {msg}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_retries: 10,
            initial_delay_ms: 100,
            max_delay_ms: 1000,
            multiplier: 2.0,
        };
        let ms: Vec<u128> = (0..6).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1000, 1000]);
    }
}
