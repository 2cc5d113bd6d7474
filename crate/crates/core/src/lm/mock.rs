//! Deterministic in-process backends.
//!
//! * [`UniformBackend`]: every token has probability `1 / vocab_size`.
//! * [`HashBackend`]: per-token log-probabilities drawn from a hash of the
//!   whole request, the token and its index. Scores are deterministic, but
//!   two continuations that differ anywhere get independent scores, so they
//!   carry no information about which candidate is correct.
//! * [`OracleBackend`]: knows the gold texts; gold scores `-0.001` per token,
//!   anything else `-5.0` per token.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{apply_stop, check_request, BackendDescriptor, LmBackend, LmError, ScoreRequest, ScoreResult, TokenLogprob};
use crate::rng::mix64;
use crate::taskgen::{Gold, TaskInstance};

pub const ORACLE_GOLD_LOGPROB: f64 = -0.001;
pub const ORACLE_OTHER_LOGPROB: f64 = -5.0;

/// How mock backends split text into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockTokenizer {
    /// Leading whitespace plus a run of non-whitespace, like `" word"`.
    #[default]
    Words,
    /// One token per Unicode scalar value.
    Chars,
}

impl MockTokenizer {
    pub fn tokenize<'a>(self, text: &'a str) -> Vec<&'a str> {
        match self {
            MockTokenizer::Chars => text
                .char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect(),
            MockTokenizer::Words => {
                let mut tokens = Vec::new();
                let mut start = 0;
                let mut in_word = false;
                for (i, c) in text.char_indices() {
                    let ws = c.is_whitespace();
                    if ws && in_word {
                        tokens.push(&text[start..i]);
                        start = i;
                        in_word = false;
                    } else if !ws {
                        in_word = true;
                    }
                }
                if start < text.len() {
                    tokens.push(&text[start..]);
                }
                tokens
            }
        }
    }

    pub fn count(self, text: &str) -> usize {
        match self {
            MockTokenizer::Chars => text.chars().count(),
            MockTokenizer::Words => self.tokenize(text).len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UniformBackend {
    descriptor: BackendDescriptor,
}

impl UniformBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        UniformBackend { descriptor }
    }

    pub fn with_vocab(vocab_size: u32) -> Self {
        UniformBackend::new(BackendDescriptor {
            vocab_size,
            ..BackendDescriptor::of_kind(super::BackendKind::MockUniform)
        })
    }
}

impl LmBackend for UniformBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        check_request(request)?;
        let logprob = -(self.descriptor.vocab_size as f64).ln();
        let tokens = self
            .descriptor
            .tokenizer
            .tokenize(&request.continuation)
            .into_iter()
            .map(|t| TokenLogprob {
                token: t.to_string(),
                logprob,
            })
            .collect();
        Ok(ScoreResult::from_tokens(tokens))
    }

    /// Every continuation is equally likely; the empty string is returned.
    fn generate(&self, _prompt: &str, max_new_tokens: usize, _stop: &[String]) -> Result<String, LmError> {
        check_generate(max_new_tokens)?;
        Ok(String::new())
    }
}

fn check_generate(max_new_tokens: usize) -> Result<(), LmError> {
    if max_new_tokens == 0 {
        return Err(LmError::InvalidRequest("max_new_tokens must be at least 1".into()));
    }
    Ok(())
}

/// Streaming FNV-1a state over the bytes seen so far.
#[derive(Debug, Clone, Copy)]
struct PrefixHash(u64);

impl PrefixHash {
    fn new(seed: u64) -> Self {
        PrefixHash(0xcbf2_9ce4_8422_2325 ^ mix64(seed))
    }

    fn feed(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashBackend {
    descriptor: BackendDescriptor,
}

/// Hash log-probabilities fall in `[-(BASE + SPREAD), -BASE]`.
const HASH_BASE_NATS: f64 = 0.5;
const HASH_SPREAD_NATS: f64 = 3.0;

impl HashBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        HashBackend { descriptor }
    }

    pub fn with_seed(seed: u64) -> Self {
        HashBackend::new(BackendDescriptor {
            hash_seed: seed,
            ..BackendDescriptor::of_kind(super::BackendKind::MockHash)
        })
    }

    fn token_logprob(&self, request: PrefixHash, token: &str, index: usize, position: usize) -> f64 {
        let mut th = PrefixHash::new(self.descriptor.hash_seed ^ 0x5eed);
        th.feed(token.as_bytes());
        let key = mix64(request.0 ^ mix64(th.0 ^ mix64(index as u64)));
        let unit = (key >> 11) as f64 / (1u64 << 53) as f64;
        let mut lp = -(HASH_BASE_NATS + HASH_SPREAD_NATS * unit);
        if let Some(p) = self.descriptor.penalty {
            if position >= p.after_tokens {
                lp -= p.nats_per_token;
            }
        }
        lp
    }
}

impl LmBackend for HashBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        check_request(request)?;
        let tokenizer = self.descriptor.tokenizer;
        // Keyed on the full request: sharing a prefix does not correlate
        // candidate scores.
        let mut key = PrefixHash::new(self.descriptor.hash_seed);
        key.feed(request.context.as_bytes());
        key.feed(&[0xff]);
        key.feed(request.continuation.as_bytes());
        let mut position = if self.descriptor.penalty.is_some() {
            tokenizer.count(&request.context)
        } else {
            0
        };
        let mut tokens = Vec::new();
        for (index, token) in tokenizer.tokenize(&request.continuation).into_iter().enumerate() {
            let logprob = self.token_logprob(key, token, index, position);
            tokens.push(TokenLogprob {
                token: token.to_string(),
                logprob,
            });
            position += 1;
        }
        Ok(ScoreResult::from_tokens(tokens))
    }

    /// Emits pseudo-random words keyed on the prompt; roughly one in eight
    /// is followed by a newline.
    fn generate(&self, prompt: &str, max_new_tokens: usize, stop: &[String]) -> Result<String, LmError> {
        check_generate(max_new_tokens)?;
        let mut prefix = PrefixHash::new(self.descriptor.hash_seed);
        prefix.feed(prompt.as_bytes());
        let mut out = String::new();
        for _ in 0..max_new_tokens {
            let h = mix64(prefix.0);
            let word = format!(" w{}", h % 1000);
            let piece = if (h >> 20) % 8 == 0 { format!("{word}\n") } else { word };
            prefix.feed(piece.as_bytes());
            out.push_str(&piece);
            let cut = apply_stop(&out, stop);
            if cut.len() < out.len() {
                return Ok(cut);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    descriptor: BackendDescriptor,
    gold_texts: HashSet<String>,
    continuations: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        OracleBackend {
            descriptor,
            gold_texts: HashSet::new(),
            continuations: HashMap::new(),
        }
    }

    /// Registers the gold candidate of every choice instance and the gold
    /// continuation of every generation instance.
    pub fn from_instances<'a>(descriptor: BackendDescriptor, instances: impl IntoIterator<Item = &'a TaskInstance>) -> Self {
        let mut oracle = OracleBackend::new(descriptor);
        for instance in instances {
            match &instance.gold {
                Gold::Choice(i) => oracle.add_gold_text(instance.choices[*i].clone()),
                Gold::Answers(answers) => oracle.add_continuation(instance.prompt.clone(), answers.join(", ")),
            }
        }
        oracle
    }

    pub fn add_gold_text(&mut self, text: impl Into<String>) {
        self.gold_texts.insert(text.into());
    }

    pub fn add_continuation(&mut self, prompt: impl Into<String>, continuation: impl Into<String>) {
        self.continuations.insert(prompt.into(), continuation.into());
    }

    /// Stored continuation for the longest registered prompt that ends
    /// `prompt`, so few-shot prefixes do not hide the test prompt.
    fn lookup(&self, prompt: &str) -> Option<&str> {
        if let Some(c) = self.continuations.get(prompt) {
            return Some(c);
        }
        self.continuations
            .iter()
            .filter(|(p, _)| prompt.ends_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, c)| c.as_str())
    }
}

impl LmBackend for OracleBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        check_request(request)?;
        let logprob = if self.gold_texts.contains(&request.continuation) {
            ORACLE_GOLD_LOGPROB
        } else {
            ORACLE_OTHER_LOGPROB
        };
        let tokens = self
            .descriptor
            .tokenizer
            .tokenize(&request.continuation)
            .into_iter()
            .map(|t| TokenLogprob {
                token: t.to_string(),
                logprob,
            })
            .collect();
        Ok(ScoreResult::from_tokens(tokens))
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize, stop: &[String]) -> Result<String, LmError> {
        check_generate(max_new_tokens)?;
        Ok(apply_stop(self.lookup(prompt).unwrap_or_default(), stop))
    }
}
