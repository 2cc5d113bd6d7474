//! HTTP completion-endpoint backend.
//!
//! Request body (POST to `base_url + path`):
//!
//! ```json
//! {"prompt": "...", "max_tokens": 0, "temperature": 0, "logprobs": true, "echo": true, "stop": []}
//! ```
//!
//! The response must follow the completions layout:
//! `choices[0].text` and `choices[0].logprobs.{tokens, token_logprobs, text_offset}`,
//! with `text_offset` counted in characters from the start of the echoed
//! prompt. Scoring echoes `context + continuation` with `max_tokens = 0` and
//! keeps every token that overlaps the continuation.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{apply_stop, check_request, BackendDescriptor, LmBackend, LmError, ScoreRequest, ScoreResult, TokenLogprob};

#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<&'a str>,
    pub prompt: &'a str,
    pub max_tokens: usize,
    pub temperature: u32,
    pub logprobs: bool,
    pub echo: bool,
    pub stop: &'a [String],
}

#[derive(Debug, Deserialize)]
pub struct CompletionResponse {
    pub choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
pub struct CompletionChoice {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<CompletionLogprobs>,
}

#[derive(Debug, Deserialize)]
pub struct CompletionLogprobs {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    pub text_offset: Vec<usize>,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("url", &self.url)
            .field("authenticated", &self.token.is_some())
            .finish()
    }
}

/// Outcome of one HTTP attempt.
enum Attempt {
    Done(String),
    Retry(String),
    Fatal(LmError),
}

impl RemoteBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, String> {
        descriptor.validate()?;
        let base = descriptor
            .base_url
            .as_deref()
            .ok_or("remote backend needs base_url")?
            .trim_end_matches('/');
        let path = if descriptor.path.starts_with('/') {
            descriptor.path.clone()
        } else {
            format!("/{}", descriptor.path)
        };
        let url = format!("{base}{path}");
        let token = std::env::var(&descriptor.auth_env).ok().filter(|t| !t.is_empty());
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(descriptor.timeout_ms)))
            .build();
        Ok(RemoteBackend {
            in_flight: Semaphore::new(descriptor.max_in_flight),
            agent: ureq::Agent::new_with_config(config),
            descriptor,
            url,
            token,
        })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.descriptor
                .backoff_ms
                .saturating_mul(factor)
                .min(self.descriptor.max_backoff_ms),
        )
    }

    fn attempt(&self, body: &CompletionRequest<'_>) -> Attempt {
        let _permit = self.in_flight.acquire();
        let mut request = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Err(e) => Attempt::Retry(e.to_string()),
            Ok(mut response) => {
                let status = response.status().as_u16();
                let text = match response.body_mut().read_to_string() {
                    Ok(t) => t,
                    Err(e) => return Attempt::Retry(format!("reading body: {e}")),
                };
                match status {
                    200..=299 => Attempt::Done(text),
                    429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {}", truncate(&text))),
                    _ => Attempt::Fatal(self.classify_rejection(status, text)),
                }
            }
        }
    }

    fn classify_rejection(&self, status: u16, body: String) -> LmError {
        let lowered = body.to_ascii_lowercase();
        if lowered.contains("context_length_exceeded") || lowered.contains("context length") {
            let limit = parse_limit(&lowered)
                .or(self.descriptor.max_context_tokens)
                .unwrap_or(0);
            return LmError::ContextOverflow {
                limit,
                message: truncate(&body),
            };
        }
        if lowered.contains("logprobs") || lowered.contains("echo") {
            return LmError::Capability(truncate(&body));
        }
        LmError::Rejected {
            status,
            body: truncate(&body),
        }
    }

    /// Sends with `1 + max_retries` attempts at most.
    fn send(&self, body: &CompletionRequest<'_>) -> Result<CompletionResponse, LmError> {
        let attempts_allowed = 1 + self.descriptor.max_retries;
        let mut last = String::new();
        for attempt in 0..attempts_allowed {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(body) {
                Attempt::Done(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| LmError::Protocol(format!("{e}: {}", truncate(&text))));
                }
                Attempt::Retry(message) => last = message,
                Attempt::Fatal(err) => return Err(err),
            }
        }
        Err(LmError::Transport {
            attempts: attempts_allowed,
            message: last,
        })
    }

    /// Provider-reported token count is authoritative for the context limit.
    fn check_context(&self, request: &ScoreRequest, echoed_tokens: usize) -> Result<(), LmError> {
        match request.max_context_tokens.or(self.descriptor.max_context_tokens) {
            Some(limit) if echoed_tokens > limit => Err(LmError::ContextOverflow {
                limit,
                message: format!("request spans {echoed_tokens} tokens"),
            }),
            _ => Ok(()),
        }
    }
}

fn truncate(text: &str) -> String {
    const MAX: usize = 400;
    if text.len() <= MAX {
        return text.to_string();
    }
    let mut end = MAX;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}

/// First integer after "maximum context length is", if present.
fn parse_limit(lowered: &str) -> Option<usize> {
    let tail = &lowered[lowered.find("maximum context length")?..];
    let digits: String = tail
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

/// Tokens overlapping the character range starting at `context_chars`.
pub fn continuation_tokens(logprobs: &CompletionLogprobs, context_chars: usize) -> Result<Vec<TokenLogprob>, LmError> {
    let n = logprobs.tokens.len();
    if logprobs.token_logprobs.len() != n || logprobs.text_offset.len() != n {
        return Err(LmError::Protocol("logprobs arrays have different lengths".into()));
    }
    let mut out = Vec::new();
    for i in 0..n {
        let token = &logprobs.tokens[i];
        let end = logprobs.text_offset[i] + token.chars().count();
        if end <= context_chars {
            continue;
        }
        match logprobs.token_logprobs[i] {
            Some(lp) => out.push(TokenLogprob {
                token: token.clone(),
                logprob: lp.min(0.0),
            }),
            // The provider cannot score the very first token of a sequence.
            None if i == 0 => {}
            None => return Err(LmError::Capability(format!("provider returned no log-probability for token {i}"))),
        }
    }
    if out.is_empty() {
        return Err(LmError::Capability("provider returned no scorable continuation tokens".into()));
    }
    Ok(out)
}

impl LmBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        check_request(request)?;
        let prompt = request.full_text();
        let body = CompletionRequest {
            model: self.descriptor.model.as_deref(),
            prompt: &prompt,
            max_tokens: 0,
            temperature: 0,
            logprobs: true,
            echo: true,
            stop: &[],
        };
        let response = self.send(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LmError::Protocol("response has no choices".into()))?;
        let logprobs = choice
            .logprobs
            .ok_or_else(|| LmError::Capability("provider did not return logprobs for the echoed prompt".into()))?;
        self.check_context(request, logprobs.tokens.len())?;
        let tokens = continuation_tokens(&logprobs, request.context.chars().count())?;
        Ok(ScoreResult::from_tokens(tokens))
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize, stop: &[String]) -> Result<String, LmError> {
        if max_new_tokens == 0 {
            return Err(LmError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        let body = CompletionRequest {
            model: self.descriptor.model.as_deref(),
            prompt,
            max_tokens: max_new_tokens,
            temperature: 0,
            logprobs: true,
            echo: false,
            stop,
        };
        let response = self.send(&body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LmError::Protocol("response has no choices".into()))?;
        Ok(apply_stop(&choice.text, stop))
    }
}
