//! Continued-pretraining planning: learning-rate schedule, token budget
//! and the two-stream data mixture.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::Ratio;
use crate::rng::{KeyedRng, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("step {step} is outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid mixture: {0}")]
    Mixture(String),
}

pub const DEFAULT_WARMUP_STEPS: u64 = 2_000;
pub const DEFAULT_TOTAL_STEPS: u64 = 85_000;
pub const DEFAULT_LR_MIN: f64 = 3.0e-6;
pub const LR_MAX_8B: f64 = 3.0e-5;
pub const LR_MAX_70B: f64 = 1.5e-5;
pub const DEFAULT_BATCH_TOKENS: u64 = 11_800_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::profile_8b()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[serde(rename = "8b")]
    Small,
    #[serde(rename = "70b")]
    Large,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "8b" => Ok(Profile::Small),
            "70b" => Ok(Profile::Large),
            _ => Err(format!("unknown profile {s:?} (valid: 8b, 70b)")),
        }
    }
}

impl ScheduleConfig {
    pub fn profile_8b() -> Self {
        ScheduleConfig {
            lr_max: LR_MAX_8B,
            lr_min: DEFAULT_LR_MIN,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            total_steps: DEFAULT_TOTAL_STEPS,
        }
    }

    pub fn profile_70b() -> Self {
        ScheduleConfig {
            lr_max: LR_MAX_70B,
            ..ScheduleConfig::profile_8b()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Small => ScheduleConfig::profile_8b(),
            Profile::Large => ScheduleConfig::profile_70b(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.lr_min > 0.0 && self.lr_min.is_finite() && self.lr_max.is_finite()) {
            return Err(PlanError::Schedule("learning rates must be positive and finite".into()));
        }
        if self.lr_min >= self.lr_max {
            return Err(PlanError::Schedule(format!(
                "lr_min {} must be below lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(PlanError::Schedule(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_max`, then cosine decay to `lr_min`.
pub fn lr_at(step: u64, cfg: &ScheduleConfig) -> Result<f64, PlanError> {
    cfg.validate()?;
    let (w, t) = (cfg.warmup_steps, cfg.total_steps);
    if step > t {
        return Err(PlanError::StepOutOfRange { step, total: t });
    }
    if step < w {
        return Ok(cfg.lr_max * step as f64 / w as f64);
    }
    if step == w {
        return Ok(cfg.lr_max);
    }
    if step == t {
        return Ok(cfg.lr_min);
    }
    let progress = (step - w) as f64 / (t - w) as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `(step, lr)` every `stride` steps, always including the last step.
pub fn schedule_table(cfg: &ScheduleConfig, stride: u64) -> Result<Vec<(u64, f64)>, PlanError> {
    if stride == 0 {
        return Err(PlanError::Schedule("stride must be at least 1".into()));
    }
    let mut steps: Vec<u64> = (0..=cfg.total_steps).step_by(stride as usize).collect();
    if steps.last() != Some(&cfg.total_steps) {
        steps.push(cfg.total_steps);
    }
    steps.into_iter().map(|s| lr_at(s, cfg).map(|lr| (s, lr))).collect()
}

pub fn schedule_csv(rows: &[(u64, f64)]) -> String {
    let mut out = String::from("step,lr\n");
    for (step, lr) in rows {
        out.push_str(&format!("{step},{lr:e}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Fraction of documents drawn from the in-domain stream.
    pub domain_ratio: Ratio,
    pub batch_tokens: u64,
    pub seed: u64,
    /// Fraction of the general stream that is non-English.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general_non_en_ratio: Option<Ratio>,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            domain_ratio: Ratio::new(1, 2),
            batch_tokens: DEFAULT_BATCH_TOKENS,
            seed: 0,
            general_non_en_ratio: None,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.domain_ratio > Ratio::ONE {
            return Err(PlanError::Mixture(format!("domain ratio {} is above 1", self.domain_ratio)));
        }
        if let Some(r) = self.general_non_en_ratio {
            if r > Ratio::ONE {
                return Err(PlanError::Mixture(format!("non-English ratio {r} is above 1")));
            }
        }
        if self.batch_tokens == 0 {
            return Err(PlanError::Mixture("batch_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLine {
    pub stream: String,
    pub tokens: u128,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBudget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    pub total_tokens: u128,
    pub domain_ratio: Ratio,
    /// `round_half_up(total_tokens * domain_ratio)`.
    pub domain_tokens: u128,
    pub general_tokens: u128,
    /// Present with a nested non-English ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general_non_en_tokens: Option<u128>,
    pub lines: Vec<BudgetLine>,
}

fn percent(part: u128, total: u128) -> f64 {
    if total == 0 {
        0.0
    } else {
        part as f64 * 100.0 / total as f64
    }
}

impl TokenBudget {
    /// Budget of `total_steps` batches of `cfg.batch_tokens` tokens.
    pub fn from_steps(cfg: &MixtureConfig, total_steps: u64) -> Result<Self, PlanError> {
        cfg.validate()?;
        if total_steps == 0 {
            return Err(PlanError::Mixture("total_steps must be positive".into()));
        }
        let total = cfg.batch_tokens as u128 * total_steps as u128;
        let mut budget = TokenBudget::from_total(total, cfg.domain_ratio, cfg.general_non_en_ratio)?;
        budget.batch_tokens = Some(cfg.batch_tokens);
        budget.total_steps = Some(total_steps);
        Ok(budget)
    }

    pub fn from_total(total_tokens: u128, domain_ratio: Ratio, general_non_en_ratio: Option<Ratio>) -> Result<Self, PlanError> {
        if domain_ratio > Ratio::ONE || general_non_en_ratio.is_some_and(|r| r > Ratio::ONE) {
            return Err(PlanError::Mixture("ratios must lie in [0, 1]".into()));
        }
        let domain_tokens = domain_ratio.mul_round_half_up(total_tokens);
        let general_tokens = total_tokens - domain_tokens;
        let general_non_en_tokens = general_non_en_ratio.map(|r| r.mul_round_half_up(general_tokens));
        let mut lines = vec![BudgetLine {
            stream: "e-commerce".into(),
            tokens: domain_tokens,
            percent: percent(domain_tokens, total_tokens),
        }];
        match general_non_en_tokens {
            None => lines.push(BudgetLine {
                stream: "general".into(),
                tokens: general_tokens,
                percent: percent(general_tokens, total_tokens),
            }),
            Some(non_en) => {
                lines.push(BudgetLine {
                    stream: "general (en)".into(),
                    tokens: general_tokens - non_en,
                    percent: percent(general_tokens - non_en, total_tokens),
                });
                lines.push(BudgetLine {
                    stream: "general (non-en)".into(),
                    tokens: non_en,
                    percent: percent(non_en, total_tokens),
                });
            }
        }
        Ok(TokenBudget {
            batch_tokens: None,
            total_steps: None,
            total_tokens,
            domain_ratio,
            domain_tokens,
            general_tokens,
            general_non_en_tokens,
            lines,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Domain,
    General,
    /// Only produced with a nested non-English ratio.
    GeneralNonEn,
}

/// Domain count after `k` labels: `round_half_up(k * r)`.
pub fn domain_count(ratio: Ratio, k: u64) -> u64 {
    ratio.mul_round_half_up(k as u128) as u64
}

/// Label pattern of the mixture. After any prefix of length `k` the number
/// of domain labels is `round_half_up(k * r)`, so it never strays from
/// `k * r` by more than one half. The nested ratio splits the general
/// labels the same way.
pub fn mixture_stream(cfg: &MixtureConfig, n: u64) -> Result<Vec<Stream>, PlanError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n as usize);
    let mut general_seen = 0u64;
    for k in 1..=n {
        if domain_count(cfg.domain_ratio, k) > domain_count(cfg.domain_ratio, k - 1) {
            out.push(Stream::Domain);
            continue;
        }
        general_seen += 1;
        let non_en = cfg
            .general_non_en_ratio
            .is_some_and(|r| domain_count(r, general_seen) > domain_count(r, general_seen - 1));
        out.push(if non_en { Stream::GeneralNonEn } else { Stream::General });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureItem {
    pub stream: Stream,
    /// Document index within its stream.
    pub item: u64,
}

/// Labels plus a seeded within-stream document order. The seed never
/// changes the label pattern.
pub fn mixture_schedule(cfg: &MixtureConfig, n: u64) -> Result<Vec<MixtureItem>, PlanError> {
    let labels = mixture_stream(cfg, n)?;
    let mut orders = std::collections::HashMap::new();
    for (i, stream) in [Stream::Domain, Stream::General, Stream::GeneralNonEn].into_iter().enumerate() {
        let count = labels.iter().filter(|s| **s == stream).count();
        let mut order: Vec<u64> = (0..count as u64).collect();
        KeyedRng::new(cfg.seed, Purpose::named("plan/mixture"), i as u64).shuffle(&mut order);
        orders.insert(stream, order.into_iter());
    }
    Ok(labels
        .into_iter()
        .map(|stream| MixtureItem {
            stream,
            item: orders.get_mut(&stream).and_then(Iterator::next).expect("one index per label"),
        })
        .collect())
}
