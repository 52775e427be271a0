//! Completion backends: a remote OpenAI-compatible chat endpoint, and
//! deterministic mock policies for tests and dry runs.

mod http;
mod mock;

pub use http::{probe, HttpBackend, HttpConfig, RetryPolicy, API_KEY_ENV};
pub use mock::{MockBackend, MockPolicy};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::PromptBundle;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
/// Temperature for single-decision modes.
pub const GREEDY_TEMPERATURE: f64 = 0.0;
/// Temperature for self-consistency sampling.
pub const SAMPLING_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Honored by mocks and by servers that accept a seed.
    pub seed: Option<u64>,
}

impl SamplingParams {
    pub fn new(temperature: f64, max_tokens: u32, seed: Option<u64>) -> Result<Self, BackendError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(BackendError::InvalidParams(format!(
                "temperature must be a non-negative number, got {temperature}"
            )));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidParams(
                "max_tokens must be at least 1".into(),
            ));
        }
        Ok(SamplingParams {
            temperature,
            max_tokens,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub request_fingerprint: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("credentials rejected (HTTP {status}): {excerpt}")]
    Auth { status: u16, excerpt: String },
    #[error("backend returned HTTP {status}: {excerpt}")]
    Backend { status: u16, excerpt: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("mock backend: {0}")]
    Mock(String),
}

/// Anything that turns a prompt into completion text.
///
/// Implementations must be safe to call from several worker threads at once
/// and must not depend on call order.
pub trait Backend: Send + Sync {
    fn backend_id(&self) -> String;

    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &SamplingParams,
        sample_index: u32,
    ) -> Result<RawCompletion, BackendError>;
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    bundle: &'a PromptBundle,
    params: &'a SamplingParams,
    sample_index: u32,
}

/// SHA-256 (hex) over the canonical JSON of the request.
pub fn request_fingerprint(
    bundle: &PromptBundle,
    params: &SamplingParams,
    sample_index: u32,
) -> String {
    let canonical = serde_json::to_vec(&FingerprintInput {
        bundle,
        params,
        sample_index,
    })
    .expect("request serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub(crate) fn body_excerpt(body: &str) -> String {
    const LIMIT: usize = 300;
    let mut s: String = body.chars().take(LIMIT).collect();
    if body.chars().count() > LIMIT {
        s.push('…');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::AlignmentMode;

    fn bundle(id: &str) -> PromptBundle {
        PromptBundle {
            system: "sys".into(),
            user: "user".into(),
            mode: AlignmentMode::Unaligned,
            scenario_id: id.into(),
        }
    }

    #[test]
    fn params_validation() {
        assert!(SamplingParams::new(-0.1, 10, None).is_err());
        assert!(SamplingParams::new(f64::NAN, 10, None).is_err());
        assert!(SamplingParams::new(0.7, 0, None).is_err());
        assert!(SamplingParams::new(0.0, 1, Some(3)).is_ok());
    }

    #[test]
    fn fingerprint_is_deterministic_and_sensitive() {
        let p = SamplingParams::new(0.7, 16, Some(1)).unwrap();
        let a = request_fingerprint(&bundle("a"), &p, 0);
        assert_eq!(a, request_fingerprint(&bundle("a"), &p, 0));
        assert_eq!(a.len(), 64);
        assert_ne!(a, request_fingerprint(&bundle("b"), &p, 0));
        assert_ne!(a, request_fingerprint(&bundle("a"), &p, 1));
        let q = SamplingParams::new(0.7, 16, Some(2)).unwrap();
        assert_ne!(a, request_fingerprint(&bundle("a"), &q, 0));
    }
}
