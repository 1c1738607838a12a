//! Provider abstractions for machine translation, chat completion and text
//! embedding, plus the HTTP and stub backends that implement them.

pub mod config;
pub mod http;
pub mod stub;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("stub has no fixture for {0:?}")]
    NoFixture(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Retry schedule for provider calls: `attempts` tries total, sleeping
/// `base_delay * 2^k` after the k-th failure.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut k = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && k + 1 < attempts => {
                    log::warn!("provider call failed (attempt {}/{}): {e}", k + 1, attempts);
                    let delay = self.base_delay * 2u32.pow(k);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    k += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub trait MtProvider: Send + Sync {
    fn id(&self) -> &str;
    fn supports(&self, src: &str, tgt: &str) -> bool;
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError>;
}

/// Decoding parameters. `None` leaves the provider default in place.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    #[serde(default)]
    pub params: DecodingParams,
    /// Distinguishes deliberate re-asks of the same prompt in the cache.
    #[serde(default)]
    pub attempt: u32,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            params: DecodingParams::default(),
            attempt: 0,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderInfo {
    pub embedder_id: String,
    pub dimensionality: usize,
    pub multilingual: bool,
}

pub trait EmbeddingBackend: Send + Sync {
    fn info(&self) -> &EmbedderInfo;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_then_fails_hard() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            calls.set(calls.get() + 1);
            Err(ProviderError::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn non_retryable_fails_fast() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            calls.set(calls.get() + 1);
            Err(ProviderError::Status {
                status: 400,
                body: String::new(),
            })
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn recovers_on_second_attempt() {
        let calls = Cell::new(0);
        let r = RetryPolicy::immediate(3).run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(ProviderError::Status {
                    status: 503,
                    body: String::new(),
                })
            } else {
                Ok(5)
            }
        });
        assert_eq!(r.unwrap(), 5);
    }
}
