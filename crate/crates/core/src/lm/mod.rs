//! Language-model backends: conditional log-probability scoring and greedy
//! continuation.
//!
//! [`RemoteBackend`] talks to an HTTP completion endpoint; the mock backends
//! are deterministic stand-ins with known answers used to validate the
//! evaluation pipeline itself.

pub mod mock;
pub mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{HashBackend, MockTokenizer, OracleBackend, UniformBackend};
pub use remote::RemoteBackend;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context_tokens: Option<usize>,
}

impl ScoreRequest {
    pub fn new(context: impl Into<String>, continuation: impl Into<String>) -> Self {
        ScoreRequest {
            context: context.into(),
            continuation: continuation.into(),
            max_context_tokens: None,
        }
    }

    /// Scores `text` unconditionally.
    pub fn whole(text: impl Into<String>) -> Self {
        ScoreRequest::new(String::new(), text)
    }

    pub fn full_text(&self) -> String {
        format!("{}{}", self.context, self.continuation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Natural-log probability, always `<= 0`.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    /// Continuation-region tokens only.
    pub token_logprobs: Vec<TokenLogprob>,
    pub total_logprob: f64,
    pub token_count: usize,
}

impl ScoreResult {
    pub fn from_tokens(token_logprobs: Vec<TokenLogprob>) -> Self {
        let total_logprob = token_logprobs.iter().map(|t| t.logprob).sum();
        let token_count = token_logprobs.len();
        ScoreResult {
            token_logprobs,
            total_logprob,
            token_count,
        }
    }

    pub fn mean_logprob(&self) -> f64 {
        if self.token_count == 0 {
            0.0
        } else {
            self.total_logprob / self.token_count as f64
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend lacks a required capability: {0}")]
    Capability(String),
    #[error("input exceeds the backend context limit of {limit} tokens: {message}")]
    ContextOverflow { limit: usize, message: String },
    #[error("backend rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Remote,
    MockUniform,
    MockOracle,
    MockHash,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::MockUniform => "mock-uniform",
            BackendKind::MockOracle => "mock-oracle",
            BackendKind::MockHash => "mock-hash",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            BackendKind::Remote,
            BackendKind::MockUniform,
            BackendKind::MockOracle,
            BackendKind::MockHash,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown backend {s:?} (valid: remote, mock-uniform, mock-oracle, mock-hash)"))
    }
}

/// Extra per-token penalty applied from a given absolute token position on.
/// Used to build fixtures whose quality degrades with input length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPenalty {
    pub after_tokens: usize,
    pub nats_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub path: String,
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
    pub max_context_tokens: Option<usize>,
    pub vocab_size: u32,
    pub hash_seed: u64,
    pub tokenizer: MockTokenizer,
    pub penalty: Option<PositionPenalty>,
}

pub const DEFAULT_AUTH_ENV: &str = "ECOMADAPT_API_KEY";

impl Default for BackendDescriptor {
    fn default() -> Self {
        BackendDescriptor {
            kind: BackendKind::MockUniform,
            base_url: None,
            path: "/v1/completions".to_string(),
            model: None,
            auth_env: DEFAULT_AUTH_ENV.to_string(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 250,
            max_backoff_ms: 8_000,
            max_in_flight: 8,
            max_context_tokens: None,
            vocab_size: 256,
            hash_seed: 0,
            tokenizer: MockTokenizer::Words,
            penalty: None,
        }
    }
}

impl BackendDescriptor {
    pub fn of_kind(kind: BackendKind) -> Self {
        BackendDescriptor {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.kind == BackendKind::Remote && self.base_url.is_none() {
            return Err("remote backend needs base_url".into());
        }
        if self.vocab_size < 2 {
            return Err("vocab_size must be at least 2".into());
        }
        Ok(())
    }
}

/// A scoring and generation capability. Implementations are shareable
/// handles; concurrent calls are allowed.
pub trait LmBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Log-probabilities of the continuation tokens given the context.
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError>;

    /// Greedy continuation of `prompt`, cut at the earliest stop string.
    fn generate(&self, prompt: &str, max_new_tokens: usize, stop: &[String]) -> Result<String, LmError>;
}

/// Builds a backend that needs no task data. Oracle backends are built with
/// [`OracleBackend::from_instances`] instead.
pub fn build_backend(descriptor: &BackendDescriptor) -> Result<Box<dyn LmBackend>, String> {
    descriptor.validate()?;
    Ok(match descriptor.kind {
        BackendKind::Remote => Box::new(RemoteBackend::new(descriptor.clone())?),
        BackendKind::MockUniform => Box::new(UniformBackend::new(descriptor.clone())),
        BackendKind::MockHash => Box::new(HashBackend::new(descriptor.clone())),
        BackendKind::MockOracle => Box::new(OracleBackend::new(descriptor.clone())),
    })
}

/// Truncates `text` at the earliest occurrence of any stop string.
pub fn apply_stop(text: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub(crate) fn check_request(request: &ScoreRequest) -> Result<(), LmError> {
    if request.continuation.is_empty() {
        return Err(LmError::InvalidRequest("continuation must be non-empty".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_rule_cuts_at_earliest_stop() {
        assert_eq!(apply_stop("Nike\nBrand:", &["\n".to_string()]), "Nike");
        assert_eq!(apply_stop("a.b,c", &[",".into(), ".".into()]), "a");
        assert_eq!(apply_stop("abc", &[]), "abc");
        assert_eq!(apply_stop("abc", &["".into()]), "abc");
    }

    #[test]
    fn descriptor_validation() {
        assert!(BackendDescriptor::default().validate().is_ok());
        let mut d = BackendDescriptor::default();
        d.max_in_flight = 0;
        assert!(d.validate().is_err());
        let d = BackendDescriptor::of_kind(BackendKind::Remote);
        assert!(d.validate().is_err());
        assert_eq!("mock-hash".parse::<BackendKind>().unwrap(), BackendKind::MockHash);
        assert!("gpt".parse::<BackendKind>().is_err());
    }

    #[test]
    fn descriptor_json_defaults() {
        let d: BackendDescriptor = serde_json::from_str(r#"{"kind":"mock-hash","hash_seed":5}"#).unwrap();
        assert_eq!(d.kind, BackendKind::MockHash);
        assert_eq!(d.hash_seed, 5);
        assert_eq!(d.max_in_flight, 8);
    }
}
