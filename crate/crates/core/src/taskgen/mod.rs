//! Benchmark synthesis for the five e-commerce tasks.
//!
//! Each generator walks a seeded permutation of its eligible units
//! (listings or stats entries). Walk position `j` is the instance ordinal and
//! keys the per-instance random stream, so any instance can be rebuilt from
//! `(seed, ordinal)` alone. Units that cannot yield a valid instance are
//! skipped with a diagnostic; they are never re-rolled.

pub mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Aspect, AspectStats, Catalog, CategoryPath, Language, Listing, StatsKey};
use crate::ratio::{MinorUnits, Ratio};
use crate::rng::{KeyedRng, Purpose};

pub const SCHEMA_VERSION: u32 = 1;
pub const CHOICES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Ap,
    ApMc,
    PpMc,
    Mca,
    McaMc,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Ap,
        TaskKind::ApMc,
        TaskKind::PpMc,
        TaskKind::Mca,
        TaskKind::McaMc,
    ];

    /// Machine name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Ap => "ap",
            TaskKind::ApMc => "ap_mc",
            TaskKind::PpMc => "pp_mc",
            TaskKind::Mca => "mca",
            TaskKind::McaMc => "mca_mc",
        }
    }

    /// Column label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Ap => "AP",
            TaskKind::ApMc => "AP^MC",
            TaskKind::PpMc => "PP^MC",
            TaskKind::Mca => "MCA",
            TaskKind::McaMc => "MCA^MC",
        }
    }

    pub fn is_choice(self) -> bool {
        matches!(self, TaskKind::ApMc | TaskKind::PpMc | TaskKind::McaMc)
    }

    fn order_purpose(self) -> Purpose {
        match self {
            TaskKind::Ap => Purpose::named("taskgen/ap/order"),
            TaskKind::ApMc => Purpose::named("taskgen/ap_mc/order"),
            TaskKind::PpMc => Purpose::named("taskgen/pp_mc/order"),
            TaskKind::Mca => Purpose::named("taskgen/mca/order"),
            TaskKind::McaMc => Purpose::named("taskgen/mca_mc/order"),
        }
    }

    fn instance_purpose(self) -> Purpose {
        match self {
            TaskKind::Ap => Purpose::named("taskgen/ap/instance"),
            TaskKind::ApMc => Purpose::named("taskgen/ap_mc/instance"),
            TaskKind::PpMc => Purpose::named("taskgen/pp_mc/instance"),
            TaskKind::Mca => Purpose::named("taskgen/mca/instance"),
            TaskKind::McaMc => Purpose::named("taskgen/mca_mc/instance"),
        }
    }

    /// Seeded walk order over `n` units.
    pub fn walk_order(self, seed: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        KeyedRng::new(seed, self.order_purpose(), 0).shuffle(&mut order);
        order
    }

    /// Random stream for walk position `ordinal`.
    pub fn instance_rng(self, seed: u64, ordinal: u64) -> KeyedRng {
        KeyedRng::new(seed, self.instance_purpose(), ordinal)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.to_ascii_lowercase().replace(['^', '-'], "_");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == lowered)
            .ok_or_else(|| {
                format!(
                    "unknown task {s:?} (valid: {})",
                    TaskKind::ALL.map(TaskKind::name).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    /// Expected answers for generation tasks, most important first.
    Answers(Vec<String>),
    /// Index of the correct candidate after shuffling.
    Choice(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Listing ids, or `category#key` for stats-derived tasks.
    pub sources: Vec<String>,
    /// One description per distractor, in candidate order.
    pub corruptions: Vec<String>,
    pub seed: u64,
    /// `construction_order[p]` is the candidate index of the candidate built
    /// at position `p`; position 0 is the uncorrupted one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub construction_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub schema: u32,
    pub kind: TaskKind,
    pub language: Language,
    /// Walk position that produced this instance.
    pub ordinal: u64,
    /// Text to continue (generation tasks); empty for choice tasks.
    pub prompt: String,
    /// Exactly four candidate texts (choice tasks); empty otherwise.
    pub choices: Vec<String>,
    pub gold: Gold,
    pub provenance: Provenance,
}

impl TaskInstance {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.kind.name(), self.language, self.ordinal)
    }

    pub fn gold_index(&self) -> Option<usize> {
        match self.gold {
            Gold::Choice(i) => Some(i),
            Gold::Answers(_) => None,
        }
    }

    pub fn gold_answers(&self) -> &[String] {
        match &self.gold {
            Gold::Answers(a) => a,
            Gold::Choice(_) => &[],
        }
    }

    /// The instance rendered with its answer, as used for few-shot blocks.
    pub fn solved_text(&self) -> String {
        match &self.gold {
            Gold::Choice(i) => self.choices[*i].clone(),
            Gold::Answers(answers) => format!("{} {}", self.prompt, answers.join(", ")),
        }
    }

    /// Candidates in construction order (uncorrupted first).
    pub fn candidates_in_construction_order(&self) -> Vec<&str> {
        self.provenance
            .construction_order
            .iter()
            .map(|&i| self.choices[i].as_str())
            .collect()
    }

    /// Checks the structural invariants of the instance.
    pub fn validate(&self) -> Result<(), String> {
        if self.kind.is_choice() {
            if self.choices.len() != CHOICES {
                return Err(format!("{}: expected {CHOICES} choices", self.id()));
            }
            for i in 0..CHOICES {
                for j in i + 1..CHOICES {
                    if self.choices[i] == self.choices[j] {
                        return Err(format!("{}: choices {i} and {j} are identical", self.id()));
                    }
                }
            }
            match self.gold {
                Gold::Choice(g) if g < CHOICES => Ok(()),
                _ => Err(format!("{}: invalid gold index", self.id())),
            }
        } else {
            match &self.gold {
                Gold::Answers(a) if !a.is_empty() && a.iter().all(|s| !s.is_empty()) => Ok(()),
                _ => Err(format!("{}: empty gold answer", self.id())),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub price_factors: Vec<Ratio>,
    pub corruption_min_aspects: usize,
    /// Number of most-common values that form the MCA gold answer.
    pub mca_top_k: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            price_factors: vec![Ratio::new(1, 10), Ratio::new(1, 4), Ratio::new(2, 1)],
            corruption_min_aspects: 1,
            mca_top_k: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn with_seed(seed: u64) -> Self {
        GeneratorConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidConfig(m));
        if self.price_factors.len() != CHOICES - 1 {
            return bad(format!(
                "price_factors needs exactly {} entries, got {}",
                CHOICES - 1,
                self.price_factors.len()
            ));
        }
        for (i, f) in self.price_factors.iter().enumerate() {
            if f.is_zero() || f.is_one() {
                return bad(format!("price factor {f} must be positive and different from 1"));
            }
            if self.price_factors[..i].contains(f) {
                return bad(format!("price factor {f} is repeated"));
            }
        }
        if self.corruption_min_aspects == 0 {
            return bad("corruption_min_aspects must be at least 1".into());
        }
        if self.mca_top_k == 0 {
            return bad("mca_top_k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenDiagnostic {
    pub kind: TaskKind,
    pub language: Language,
    /// Walk position, absent for shortage notices.
    pub ordinal: Option<u64>,
    pub source: Option<String>,
    pub message: String,
}

impl fmt::Display for GenDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.kind.name(), self.language)?;
        if let Some(o) = self.ordinal {
            write!(f, " #{o}")?;
        }
        if let Some(s) = &self.source {
            write!(f, " ({s})")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub instances: Vec<TaskInstance>,
    pub diagnostics: Vec<GenDiagnostic>,
}

impl Generated {
    fn skip(&mut self, kind: TaskKind, language: Language, ordinal: u64, source: &str, message: String) {
        self.diagnostics.push(GenDiagnostic {
            kind,
            language,
            ordinal: Some(ordinal),
            source: Some(source.to_string()),
            message,
        });
    }

    fn finish(mut self, kind: TaskKind, language: Language, requested: usize, eligible: usize) -> Self {
        if self.instances.len() < requested {
            self.diagnostics.push(GenDiagnostic {
                kind,
                language,
                ordinal: None,
                source: None,
                message: format!(
                    "shortage: produced {} of {requested} requested instances from {eligible} eligible units",
                    self.instances.len()
                ),
            });
        }
        self
    }
}

/// Dispatches to the generator for `kind`.
pub fn generate(
    kind: TaskKind,
    catalog: &Catalog,
    stats: &AspectStats,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    match kind {
        TaskKind::Ap => gen_ap(catalog, stats, config, language, count),
        TaskKind::ApMc => gen_ap_mc(catalog, stats, config, language, count),
        TaskKind::PpMc => gen_pp_mc(catalog, config, language, count),
        TaskKind::Mca => gen_mca(stats, config, language, count),
        TaskKind::McaMc => gen_mca_mc(stats, config, language, count),
    }
}

/// Shuffles `constructed` (uncorrupted candidate at 0) into candidate order.
fn shuffle_candidates(rng: &mut KeyedRng, constructed: Vec<String>, descriptors: Vec<String>) -> (Vec<String>, usize, Vec<String>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..constructed.len()).collect();
    rng.shuffle(&mut perm);
    let choices: Vec<String> = perm.iter().map(|&p| constructed[p].clone()).collect();
    let mut construction_order = vec![0; perm.len()];
    for (idx, &p) in perm.iter().enumerate() {
        construction_order[p] = idx;
    }
    let gold = construction_order[0];
    let corruptions = perm
        .iter()
        .filter(|&&p| p != 0)
        .map(|&p| descriptors[p - 1].clone())
        .collect();
    (choices, gold, corruptions, construction_order)
}

fn eligible_listings<'a>(catalog: &'a Catalog, language: Language, pred: impl Fn(&Listing) -> bool) -> Vec<&'a Listing> {
    catalog.by_language(language).filter(|l| pred(l)).collect()
}

/// Aspect prediction: continue the prompt with the listing's value for one
/// sampled key.
pub fn gen_ap(
    catalog: &Catalog,
    _stats: &AspectStats,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    config.validate()?;
    let kind = TaskKind::Ap;
    let eligible = eligible_listings(catalog, language, |l| !l.aspects.is_empty());
    let order = kind.walk_order(config.seed, eligible.len());
    let mut out = Generated::default();
    for (j, &idx) in order.iter().enumerate() {
        if out.instances.len() == count {
            break;
        }
        let listing = eligible[idx];
        let mut rng = kind.instance_rng(config.seed, j as u64);
        let aspect = &listing.aspects[rng.below(listing.aspects.len())];
        out.instances.push(TaskInstance {
            schema: SCHEMA_VERSION,
            kind,
            language,
            ordinal: j as u64,
            prompt: templates::ap_prompt(&listing.category.to_string(), &listing.title, &aspect.key),
            choices: Vec::new(),
            gold: Gold::Answers(vec![aspect.value.clone()]),
            provenance: Provenance {
                sources: vec![listing.id.clone()],
                corruptions: Vec::new(),
                seed: config.seed,
                construction_order: Vec::new(),
            },
        });
    }
    Ok(out.finish(kind, language, count, eligible.len()))
}

/// Aspect prediction, multiple choice: the true listing against three copies
/// whose aspect values were swapped for other values observed under the same
/// key in the same category.
pub fn gen_ap_mc(
    catalog: &Catalog,
    stats: &AspectStats,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    config.validate()?;
    let kind = TaskKind::ApMc;
    let eligible = eligible_listings(catalog, language, |l| !l.aspects.is_empty());
    let order = kind.walk_order(config.seed, eligible.len());
    let mut out = Generated::default();
    for (j, &idx) in order.iter().enumerate() {
        if out.instances.len() == count {
            break;
        }
        let listing = eligible[idx];
        let mut rng = kind.instance_rng(config.seed, j as u64);
        match corrupt_listing(listing, stats, config.corruption_min_aspects, &mut rng) {
            Ok(distractors) => {
                let mut constructed = vec![templates::ap_mc_candidate(&listing.title, &listing.aspects)];
                let mut descriptors = Vec::new();
                for d in distractors {
                    constructed.push(templates::ap_mc_candidate(&listing.title, &d.aspects));
                    descriptors.push(d.description);
                }
                let (choices, gold, corruptions, construction_order) =
                    shuffle_candidates(&mut rng, constructed, descriptors);
                out.instances.push(TaskInstance {
                    schema: SCHEMA_VERSION,
                    kind,
                    language,
                    ordinal: j as u64,
                    prompt: String::new(),
                    choices,
                    gold: Gold::Choice(gold),
                    provenance: Provenance {
                        sources: vec![listing.id.clone()],
                        corruptions,
                        seed: config.seed,
                        construction_order,
                    },
                });
            }
            Err(message) => out.skip(kind, language, j as u64, &listing.id, message),
        }
    }
    Ok(out.finish(kind, language, count, eligible.len()))
}

struct Distractor {
    aspects: Vec<Aspect>,
    description: String,
    /// (aspect position, replacement rank) per replaced key; sort key for
    /// construction order.
    ranks: Vec<(usize, usize)>,
}

fn corrupt_listing(
    listing: &Listing,
    stats: &AspectStats,
    min_aspects: usize,
    rng: &mut KeyedRng,
) -> Result<Vec<Distractor>, String> {
    // (aspect position, alternatives as (value, rank)) for every key with at
    // least one other observed value.
    let mut corruptible: Vec<(usize, Vec<(String, usize)>)> = Vec::new();
    for (pos, aspect) in listing.aspects.iter().enumerate() {
        let observed = stats
            .get(listing.language, &listing.category, &aspect.key)
            .unwrap_or(&[]);
        let mut alternatives: Vec<(String, usize)> = observed
            .iter()
            .enumerate()
            .filter(|(_, (v, _))| *v != aspect.value)
            .map(|(rank, (v, _))| (v.clone(), rank))
            .collect();
        if !alternatives.is_empty() {
            rng.shuffle(&mut alternatives);
            corruptible.push((pos, alternatives));
        }
    }
    if corruptible.len() < min_aspects {
        return Err(format!(
            "only {} corruptible aspect keys, need {min_aspects}",
            corruptible.len()
        ));
    }
    rng.shuffle(&mut corruptible);

    let mut used = vec![0usize; corruptible.len()];
    let mut pointer = 0usize;
    let mut distractors: Vec<Distractor> = Vec::with_capacity(CHOICES - 1);
    for _ in 0..CHOICES - 1 {
        let n = corruptible.len();
        let rotation: Vec<usize> = (0..n).map(|t| (pointer + t) % n).collect();
        let mut chosen: Vec<usize> = rotation
            .iter()
            .copied()
            .filter(|&c| used[c] < corruptible[c].1.len())
            .take(min_aspects)
            .collect();
        for &c in &rotation {
            if chosen.len() == min_aspects {
                break;
            }
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        pointer = (pointer + 1) % n;

        let mut aspects = listing.aspects.clone();
        let mut parts = Vec::new();
        let mut ranks = Vec::new();
        for &c in &chosen {
            let (pos, alternatives) = &corruptible[c];
            let (value, rank) = &alternatives[used[c] % alternatives.len()];
            used[c] += 1;
            parts.push(format!("{}: {} -> {}", aspects[*pos].key, aspects[*pos].value, value));
            aspects[*pos].value = value.clone();
            ranks.push((*pos, *rank));
        }
        ranks.sort();
        parts.sort();
        if aspects == listing.aspects || distractors.iter().any(|d| d.aspects == aspects) {
            return Err("could not build 3 distinct corrupted candidates".to_string());
        }
        distractors.push(Distractor {
            aspects,
            description: parts.join("; "),
            ranks,
        });
    }
    distractors.sort_by(|a, b| a.ranks.cmp(&b.ranks));
    Ok(distractors)
}

/// Price prediction, multiple choice: the true selling price against
/// `price × factor` for each configured factor, rounded half-up to cents.
pub fn gen_pp_mc(
    catalog: &Catalog,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    config.validate()?;
    let kind = TaskKind::PpMc;
    let eligible = eligible_listings(catalog, language, |l| l.price.is_some());
    let order = kind.walk_order(config.seed, eligible.len());
    let mut out = Generated::default();
    for (j, &idx) in order.iter().enumerate() {
        if out.instances.len() == count {
            break;
        }
        let listing = eligible[idx];
        let price = listing.price.as_ref().expect("eligible listings have prices");
        match distractor_prices(price.amount, &config.price_factors) {
            Ok(prices) => {
                let symbol = price.symbol();
                let mut constructed = vec![templates::pp_mc_candidate(
                    &listing.title,
                    &symbol,
                    &price.amount.to_string(),
                )];
                let mut descriptors = Vec::new();
                for (factor, p) in config.price_factors.iter().zip(&prices) {
                    constructed.push(templates::pp_mc_candidate(&listing.title, &symbol, &p.to_string()));
                    descriptors.push(format!("price {} x {factor} = {p}", price.amount));
                }
                let mut rng = kind.instance_rng(config.seed, j as u64);
                let (choices, gold, corruptions, construction_order) =
                    shuffle_candidates(&mut rng, constructed, descriptors);
                out.instances.push(TaskInstance {
                    schema: SCHEMA_VERSION,
                    kind,
                    language,
                    ordinal: j as u64,
                    prompt: String::new(),
                    choices,
                    gold: Gold::Choice(gold),
                    provenance: Provenance {
                        sources: vec![listing.id.clone()],
                        corruptions,
                        seed: config.seed,
                        construction_order,
                    },
                });
            }
            Err(message) => out.skip(kind, language, j as u64, &listing.id, message),
        }
    }
    Ok(out.finish(kind, language, count, eligible.len()))
}

/// Distractor prices in factor order, or why the price is degenerate.
pub fn distractor_prices(price: MinorUnits, factors: &[Ratio]) -> Result<Vec<MinorUnits>, String> {
    let mut prices = Vec::with_capacity(factors.len());
    for factor in factors {
        let scaled = factor.mul_round_half_up(price.0 as u128);
        if scaled == 0 {
            return Err(format!("price {price} x {factor} rounds to 0.00"));
        }
        let scaled = u64::try_from(scaled).map_err(|_| format!("price {price} x {factor} overflows"))?;
        let candidate = MinorUnits(scaled);
        if candidate == price || prices.contains(&candidate) {
            return Err(format!("price {price} x {factor} collides with another candidate"));
        }
        prices.push(candidate);
    }
    Ok(prices)
}

fn stats_source(key: &StatsKey) -> String {
    format!("{}#{}", key.category, key.key)
}

/// Whether the top-`k` values are separated from the rest by count, and the
/// first value is unique.
fn strict_top(values: &[(String, u64)], k: usize) -> bool {
    if values.len() < k {
        return false;
    }
    let first_ok = values.len() < 2 || values[0].1 > values[1].1;
    let boundary_ok = values.len() == k || values[k - 1].1 > values[k].1;
    first_ok && boundary_ok
}

/// Most common aspects: continue the prompt with the top-k values.
pub fn gen_mca(
    stats: &AspectStats,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    config.validate()?;
    let kind = TaskKind::Mca;
    let k = config.mca_top_k;
    let units: Vec<(&StatsKey, &[(String, u64)])> = stats.for_language(language).collect();
    let order = kind.walk_order(config.seed, units.len());
    let mut out = Generated::default();
    for (j, &idx) in order.iter().enumerate() {
        if out.instances.len() == count {
            break;
        }
        let (key, values) = units[idx];
        if !strict_top(values, k) {
            out.skip(kind, language, j as u64, &stats_source(key), format!("no strict top-{k} value"));
            continue;
        }
        out.instances.push(TaskInstance {
            schema: SCHEMA_VERSION,
            kind,
            language,
            ordinal: j as u64,
            prompt: templates::mca_prompt(&key.category.to_string(), &key.key),
            choices: Vec::new(),
            gold: Gold::Answers(values[..k].iter().map(|(v, _)| v.clone()).collect()),
            provenance: Provenance {
                sources: vec![stats_source(key)],
                corruptions: Vec::new(),
                seed: config.seed,
                construction_order: Vec::new(),
            },
        });
    }
    Ok(out.finish(kind, language, count, units.len()))
}

/// Most common aspects, multiple choice: the top value against three sampled
/// less common values for the same key.
pub fn gen_mca_mc(
    stats: &AspectStats,
    config: &GeneratorConfig,
    language: Language,
    count: usize,
) -> Result<Generated, GenError> {
    config.validate()?;
    let kind = TaskKind::McaMc;
    let units: Vec<(&StatsKey, &[(String, u64)])> = stats.for_language(language).collect();
    let order = kind.walk_order(config.seed, units.len());
    let mut out = Generated::default();
    for (j, &idx) in order.iter().enumerate() {
        if out.instances.len() == count {
            break;
        }
        let (key, values) = units[idx];
        let source = stats_source(key);
        if values.len() < CHOICES {
            out.skip(kind, language, j as u64, &source, format!("only {} distinct values", values.len()));
            continue;
        }
        if !strict_top(values, 1) {
            out.skip(kind, language, j as u64, &source, "no strict top-1 value".into());
            continue;
        }
        let mut rng = kind.instance_rng(config.seed, j as u64);
        let mut picked: Vec<usize> = rng
            .sample_indices(values.len() - 1, CHOICES - 1)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        picked.sort_unstable();
        let category = key.category.to_string();
        let mut constructed = vec![templates::mca_mc_candidate(&category, &key.key, &values[0].0)];
        let mut descriptors = Vec::new();
        for &rank in &picked {
            let (value, c) = &values[rank];
            constructed.push(templates::mca_mc_candidate(&category, &key.key, value));
            descriptors.push(format!("rank {rank} value {value:?} (count {c} < {})", values[0].1));
        }
        let (choices, gold, corruptions, construction_order) =
            shuffle_candidates(&mut rng, constructed, descriptors);
        out.instances.push(TaskInstance {
            schema: SCHEMA_VERSION,
            kind,
            language,
            ordinal: j as u64,
            prompt: String::new(),
            choices,
            gold: Gold::Choice(gold),
            provenance: Provenance {
                sources: vec![source],
                corruptions,
                seed: config.seed,
                construction_order,
            },
        });
    }
    Ok(out.finish(kind, language, count, units.len()))
}

/// Writes one JSON object per line.
pub fn write_task_file(path: impl AsRef<std::path::Path>, instances: &[TaskInstance]) -> std::io::Result<()> {
    let mut buf = String::new();
    for instance in instances {
        buf.push_str(&serde_json::to_string(instance).map_err(std::io::Error::other)?);
        buf.push('\n');
    }
    std::fs::write(path, buf)
}

#[derive(Debug, Error)]
pub enum TaskFileError {
    #[error("cannot read task file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
}

pub fn read_task_file(path: impl AsRef<std::path::Path>) -> Result<Vec<TaskInstance>, TaskFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaskFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| TaskFileError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let instance: TaskInstance = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if instance.schema != SCHEMA_VERSION {
            return Err(parse_err(format!("unsupported schema {}", instance.schema)));
        }
        instance.validate().map_err(parse_err)?;
        out.push(instance);
    }
    Ok(out)
}

/// Convenience for callers that want a category path from `:`-joined text.
pub fn category_from_joined(text: &str) -> CategoryPath {
    CategoryPath(text.split(':').map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{compute_aspect_stats, Price};

    fn listing(id: &str, cat: &[&str], aspects: &[(&str, &str)], price: Option<u64>) -> Listing {
        Listing {
            id: id.into(),
            title: format!("Title {id}"),
            category: CategoryPath(cat.iter().map(|s| s.to_string()).collect()),
            price: price.map(|p| Price {
                amount: MinorUnits(p),
                currency: "USD".into(),
            }),
            aspects: aspects
                .iter()
                .map(|(k, v)| Aspect {
                    key: k.to_string(),
                    value: v.to_string(),
                })
                .collect(),
            language: Language::En,
        }
    }

    #[test]
    fn task_names_roundtrip_and_reject_unknown() {
        for kind in TaskKind::ALL {
            assert_eq!(kind.name().parse::<TaskKind>().unwrap(), kind);
        }
        assert_eq!("AP^MC".parse::<TaskKind>().unwrap(), TaskKind::ApMc);
        let err = "foo".parse::<TaskKind>().unwrap_err();
        assert!(err.contains("ap, ap_mc, pp_mc, mca, mca_mc"), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let mut c = GeneratorConfig::default();
        c.price_factors[0] = Ratio::ONE;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::default();
        c.price_factors[1] = c.price_factors[0];
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::default();
        c.price_factors.pop();
        assert!(c.validate().is_err());
        let c = GeneratorConfig {
            corruption_min_aspects: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_aspect_listing_gold_is_that_value_for_any_seed() {
        let catalog = Catalog::from_listings(vec![listing("a", &["C"], &[("Brand", "Nike")], None)]);
        let stats = compute_aspect_stats(&catalog);
        for seed in 0..20 {
            let out = gen_ap(&catalog, &stats, &GeneratorConfig::with_seed(seed), Language::En, 1).unwrap();
            assert_eq!(out.instances[0].gold, Gold::Answers(vec!["Nike".into()]));
        }
    }

    #[test]
    fn ap_shortage_is_reported() {
        let catalog = Catalog::from_listings(vec![
            listing("a", &["C"], &[("Brand", "Nike")], None),
            listing("b", &["C"], &[], None),
        ]);
        let stats = compute_aspect_stats(&catalog);
        let out = gen_ap(&catalog, &stats, &GeneratorConfig::default(), Language::En, 5).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].message.contains("shortage"));
    }

    #[test]
    fn four_observed_values_force_the_distractors() {
        let mut listings = vec![listing("target", &["C"], &[("Rating", "M")], None)];
        for (i, v) in ["E", "T", "AO"].iter().enumerate() {
            listings.push(listing(&format!("o{i}"), &["C"], &[("Rating", v)], None));
        }
        let catalog = Catalog::from_listings(listings);
        let stats = compute_aspect_stats(&catalog);
        let target = Catalog::from_listings(vec![catalog.listings[0].clone()]);
        for seed in 0..25 {
            let out = gen_ap_mc(&target, &stats, &GeneratorConfig::with_seed(seed), Language::En, 1).unwrap();
            let inst = &out.instances[0];
            inst.validate().unwrap();
            let mut values: Vec<String> = inst
                .choices
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != inst.gold_index())
                .map(|(_, c)| c.rsplit(": ").next().unwrap().to_string())
                .collect();
            values.sort();
            assert_eq!(values, vec!["AO", "E", "T"]);
            assert!(inst.choices[inst.gold_index().unwrap()].ends_with("Rating: M"));
        }
    }

    #[test]
    fn uncorruptible_listing_is_skipped() {
        let catalog = Catalog::from_listings(vec![listing("a", &["C"], &[("Brand", "Nike")], None)]);
        let stats = compute_aspect_stats(&catalog);
        let out = gen_ap_mc(&catalog, &stats, &GeneratorConfig::default(), Language::En, 1).unwrap();
        assert!(out.instances.is_empty());
        assert!(out.diagnostics[0].message.contains("corruptible"));
    }

    #[test]
    fn two_keys_with_few_values_still_yield_three_distractors() {
        let mut listings = vec![listing("t", &["C"], &[("A", "a0"), ("B", "b0")], None)];
        listings.push(listing("x", &["C"], &[("A", "a1"), ("B", "b1")], None));
        listings.push(listing("y", &["C"], &[("B", "b2")], None));
        let catalog = Catalog::from_listings(listings);
        let stats = compute_aspect_stats(&catalog);
        let target = Catalog::from_listings(vec![catalog.listings[0].clone()]);
        for seed in 0..25 {
            let out = gen_ap_mc(&target, &stats, &GeneratorConfig::with_seed(seed), Language::En, 1).unwrap();
            assert_eq!(out.instances.len(), 1, "seed {seed}: {:?}", out.diagnostics);
            out.instances[0].validate().unwrap();
        }
    }

    #[test]
    fn price_distractors_follow_factors() {
        let factors = GeneratorConfig::default().price_factors;
        assert_eq!(
            distractor_prices(MinorUnits(81_600), &factors).unwrap(),
            vec![MinorUnits(8_160), MinorUnits(20_400), MinorUnits(163_200)]
        );
        assert!(distractor_prices(MinorUnits(4), &factors).unwrap_err().contains("0.00"));
        // 0.10 x 1/10 = 0.01 and 0.10 x 1/4 = 0.025 -> 0.03: fine
        assert!(distractor_prices(MinorUnits(10), &factors).is_ok());
        // 0.02 x 1/10 rounds to 0.00
        assert!(distractor_prices(MinorUnits(2), &factors).is_err());
    }

    #[test]
    fn degenerate_price_instance_is_skipped() {
        let catalog = Catalog::from_listings(vec![listing("cheap", &["C"], &[], Some(4))]);
        let out = gen_pp_mc(&catalog, &GeneratorConfig::default(), Language::En, 1).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!(out.diagnostics[0].source.as_deref(), Some("cheap"));
    }

    #[test]
    fn mca_top1_and_tie_rules() {
        let mut listings = Vec::new();
        for i in 0..5 {
            listings.push(listing(&format!("a{i}"), &["X"], &[("K", "A")], None));
        }
        listings.push(listing("b", &["X"], &[("K", "B")], None));
        for (i, v) in ["A", "A", "A", "B", "B", "B"].iter().enumerate() {
            listings.push(listing(&format!("t{i}"), &["Y"], &[("K", v)], None));
        }
        let stats = compute_aspect_stats(&Catalog::from_listings(listings));
        let out = gen_mca(&stats, &GeneratorConfig::default(), Language::En, 10).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.instances[0].gold, Gold::Answers(vec!["A".into()]));
        assert_eq!(out.instances[0].provenance.sources, vec!["X#K".to_string()]);
        assert!(out.diagnostics.iter().any(|d| d.source.as_deref() == Some("Y#K")));
    }

    #[test]
    fn mca_mc_needs_four_values() {
        let mut listings = Vec::new();
        for (i, v) in ["A", "A", "B", "C"].iter().enumerate() {
            listings.push(listing(&format!("x{i}"), &["X"], &[("K", v)], None));
        }
        let stats = compute_aspect_stats(&Catalog::from_listings(listings));
        let out = gen_mca_mc(&stats, &GeneratorConfig::default(), Language::En, 1).unwrap();
        assert!(out.instances.is_empty());
        assert!(out.diagnostics[0].message.contains("3 distinct"));
    }

    #[test]
    fn shuffle_bookkeeping_is_consistent() {
        let mut rng = KeyedRng::new(3, Purpose::named("t"), 0);
        let constructed: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let descriptors: Vec<String> = (1..4).map(|i| format!("d{i}")).collect();
        let (choices, gold, corruptions, order) = shuffle_candidates(&mut rng, constructed.clone(), descriptors);
        assert_eq!(choices[gold], "c0");
        for (p, &i) in order.iter().enumerate() {
            assert_eq!(choices[i], constructed[p]);
        }
        assert_eq!(corruptions.len(), 3);
    }
}
