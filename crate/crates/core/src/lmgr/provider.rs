//! Provider interfaces for chat completion and text embedding.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifies the model; cached vectors are only reused for the same id.
    fn model_id(&self) -> &str;

    /// One vector per input text, all of the same dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl<T: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String> {
        (**self).complete(messages, params)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(texts)
    }
}

/// Exponential backoff: `initial_backoff * 2^attempt` between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, what: &str, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(Error::Provider(msg)) if attempt < self.max_retries => {
                    let wait = self.initial_backoff * 2u32.pow(attempt);
                    log::warn!("{what} failed (attempt {}): {msg}; retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(Error::Provider(msg)) => {
                    return Err(Error::Provider(format!(
                        "{what} failed after {} attempts: {msg}",
                        attempt + 1
                    )))
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Wraps a provider with a [`RetryPolicy`]. Only [`Error::Provider`] failures are retried.
pub struct Retrying<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P> Retrying<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Retrying { inner, policy }
    }
}

impl<P: LlmProvider> LlmProvider for Retrying<P> {
    fn complete(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<String> {
        self.policy
            .run("completion", || self.inner.complete(messages, params))
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Retrying<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.policy.run("embedding", || self.inner.embed(texts))
    }
}

/// Scales `v` to unit length.
pub fn normalize(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Provider("embedding has zero or non-finite norm".into()));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl LlmProvider for Flaky {
        fn complete(&self, _: &[ChatMessage], _: &CompletionParams) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(Error::Provider("503".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::ZERO,
        }
    }

    const PARAMS: CompletionParams = CompletionParams {
        temperature: 0.0,
        max_tokens: 8,
    };

    #[test]
    fn retries_then_succeeds() {
        let p = Retrying::new(Flaky { failures: 3, calls: AtomicU32::new(0) }, fast());
        assert_eq!(p.complete(&[], &PARAMS).unwrap(), "ok");
        assert_eq!(p.inner.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let p = Retrying::new(Flaky { failures: 4, calls: AtomicU32::new(0) }, fast());
        assert!(matches!(p.complete(&[], &PARAMS), Err(Error::Provider(_))));
        assert_eq!(p.inner.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn normalize_unit() {
        let mut v = vec![3.0, 4.0];
        normalize(&mut v).unwrap();
        assert_eq!(v, [0.6, 0.8]);
        assert!(normalize(&mut [0.0, 0.0]).is_err());
    }
}
