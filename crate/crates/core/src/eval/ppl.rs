//! Corpus perplexity and perplexity as a function of input length.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::lm::{LmBackend, ScoreRequest, TokenLogprob};

/// Relative change between neighbouring rows still counted as flat.
pub const DEFAULT_TREND_TOLERANCE: f64 = 0.05;

/// Scoring window. With `window = None` every text is scored in one pass;
/// otherwise texts longer than `window` tokens are scored in chunks of
/// `stride` new tokens, each conditioned on up to `window - stride` tokens
/// of preceding context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PplPolicy {
    pub window: Option<usize>,
    pub stride: usize,
}

impl Default for PplPolicy {
    fn default() -> Self {
        PplPolicy { window: None, stride: 0 }
    }
}

impl PplPolicy {
    pub fn sliding(window: usize, stride: usize) -> Self {
        PplPolicy {
            window: Some(window),
            stride,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        if let Some(window) = self.window {
            if self.stride == 0 || self.stride > window {
                return Err(EvalError::Options(format!(
                    "stride must be in 1..={window} for a window of {window} tokens"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub perplexity: f64,
    pub mean_nll: f64,
    pub total_nll: f64,
    pub tokens: usize,
    pub texts: usize,
    pub policy: PplPolicy,
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    sum: f64,
    compensation: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.compensation
    }
}

fn score_whole(backend: &dyn LmBackend, text: &str, index: usize) -> Result<Vec<TokenLogprob>, EvalError> {
    backend
        .score(&ScoreRequest::whole(text))
        .map(|r| r.token_logprobs)
        .map_err(|source| EvalError::Backend {
            id: format!("text {index}"),
            source,
        })
}

/// Token log-probabilities for one text under the policy.
fn score_text(backend: &dyn LmBackend, text: &str, index: usize, policy: &PplPolicy) -> Result<Vec<TokenLogprob>, EvalError> {
    let whole = score_whole(backend, text, index)?;
    let Some(window) = policy.window else {
        return Ok(whole);
    };
    if whole.len() <= window {
        return Ok(whole);
    }
    // Re-score in chunks, using the token texts of the first pass as the
    // segmentation.
    let pieces: Vec<&str> = whole.iter().map(|t| t.token.as_str()).collect();
    let mut out = Vec::with_capacity(whole.len());
    let mut scored_to = 0;
    while scored_to < pieces.len() {
        let end = (scored_to + policy.stride).min(pieces.len());
        let begin = end.saturating_sub(window);
        let context = pieces[begin..scored_to].concat();
        let continuation = pieces[scored_to..end].concat();
        let result = backend
            .score(&ScoreRequest::new(context, continuation))
            .map_err(|source| EvalError::Backend {
                id: format!("text {index}, tokens {scored_to}..{end}"),
                source,
            })?;
        out.extend(result.token_logprobs);
        scored_to = end;
    }
    Ok(out)
}

/// `exp(total NLL / total tokens)` over every scored token of every text.
pub fn perplexity(texts: &[String], backend: &dyn LmBackend, policy: PplPolicy) -> Result<PerplexityResult, EvalError> {
    if texts.is_empty() {
        return Err(EvalError::Empty);
    }
    policy.validate()?;
    let mut nll = Sum::default();
    let mut tokens = 0;
    for (index, text) in texts.iter().enumerate() {
        for t in score_text(backend, text, index, &policy)? {
            nll.add(-t.logprob);
            tokens += 1;
        }
    }
    if tokens == 0 {
        return Err(EvalError::Options("corpus produced no scorable tokens".into()));
    }
    let total_nll = nll.value();
    let mean_nll = total_nll / tokens as f64;
    Ok(PerplexityResult {
        perplexity: mean_nll.exp(),
        mean_nll,
        total_nll,
        tokens,
        texts: texts.len(),
        policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Flat,
    Rising,
    Falling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub length: usize,
    /// Texts long enough for this length.
    pub texts: usize,
    /// Scored tokens, `length * texts`.
    pub tokens: usize,
    pub mean_nll: Option<f64>,
    pub ppl: Option<f64>,
    /// Change relative to the previous row with a value.
    pub trend: Option<Trend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub rows: Vec<PplRow>,
    pub tolerance: f64,
    /// Last length before the curve starts rising for good, when every
    /// earlier step is flat.
    pub rise_onset: Option<usize>,
    pub diagnostics: Vec<String>,
}

impl PplReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,tokens,ppl\n");
        for row in &self.rows {
            let ppl = row.ppl.map(|p| format!("{p}")).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", row.length, row.tokens, ppl));
        }
        out
    }
}

fn classify(previous: f64, current: f64, tolerance: f64) -> Trend {
    let change = current / previous - 1.0;
    if change > tolerance {
        Trend::Rising
    } else if change < -tolerance {
        Trend::Falling
    } else {
        Trend::Flat
    }
}

/// Perplexity of the first `L` tokens of every text that has at least `L`
/// tokens, for each `L` in `lengths`. Each text is scored once; causal
/// scoring makes the prefix log-probabilities those of the truncated text.
pub fn ppl_vs_length(
    texts: &[String],
    backend: &dyn LmBackend,
    lengths: &[usize],
    tolerance: f64,
) -> Result<PplReport, EvalError> {
    if texts.is_empty() {
        return Err(EvalError::Empty);
    }
    if lengths.is_empty() || lengths[0] == 0 || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Options("lengths must be positive and strictly increasing".into()));
    }
    let scored: Vec<Vec<f64>> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| score_whole(backend, t, i).map(|toks| toks.into_iter().map(|t| t.logprob).collect()))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(lengths.len());
    let mut diagnostics = Vec::new();
    let mut previous: Option<f64> = None;
    for &length in lengths {
        let eligible: Vec<&Vec<f64>> = scored.iter().filter(|lp| lp.len() >= length).collect();
        if eligible.is_empty() {
            diagnostics.push(format!("no text reaches {length} tokens"));
            rows.push(PplRow {
                length,
                texts: 0,
                tokens: 0,
                mean_nll: None,
                ppl: None,
                trend: None,
            });
            continue;
        }
        let mut nll = Sum::default();
        for lp in &eligible {
            for &x in &lp[..length] {
                nll.add(-x);
            }
        }
        let tokens = length * eligible.len();
        let mean_nll = nll.value() / tokens as f64;
        let ppl = mean_nll.exp();
        rows.push(PplRow {
            length,
            texts: eligible.len(),
            tokens,
            mean_nll: Some(mean_nll),
            ppl: Some(ppl),
            trend: previous.map(|p| classify(p, ppl, tolerance)),
        });
        previous = Some(ppl);
    }
    Ok(PplReport {
        rise_onset: rise_onset(&rows),
        rows,
        tolerance,
        diagnostics,
    })
}

fn rise_onset(rows: &[PplRow]) -> Option<usize> {
    let valued: Vec<&PplRow> = rows.iter().filter(|r| r.ppl.is_some()).collect();
    let first_rise = valued.iter().position(|r| r.trend == Some(Trend::Rising))?;
    let before_flat = valued[1..first_rise].iter().all(|r| r.trend == Some(Trend::Flat));
    let after_rising = valued[first_rise..].iter().all(|r| r.trend == Some(Trend::Rising));
    (before_flat && after_rising).then(|| valued[first_rise - 1].length)
}
