//! Few-shot evaluation of task instances against a backend.

mod ppl;
mod table;

pub use ppl::{perplexity, ppl_vs_length, PerplexityResult, PplPolicy, PplReport, PplRow, Trend, DEFAULT_TREND_TOLERANCE};
pub use table::{render_language_table, render_summary_table, report_csv, SummaryRow};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Language;
use crate::lm::{BackendDescriptor, LmBackend, LmError, ScoreRequest};
use crate::rng::{fnv1a, KeyedRng, Purpose};
use crate::taskgen::{Gold, TaskInstance, TaskKind, CHOICES};

/// Separator between few-shot blocks and before the test prompt.
pub const SHOT_SEPARATOR: &str = "\n\n";

/// Generation stops at the first newline.
pub const GENERATION_STOP: &str = "\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotPolicy {
    pub shots: BTreeMap<TaskKind, usize>,
    /// Seed for example selection.
    pub seed: u64,
}

impl Default for FewShotPolicy {
    fn default() -> Self {
        FewShotPolicy {
            shots: TaskKind::ALL.into_iter().map(|k| (k, default_shots(k))).collect(),
            seed: 0,
        }
    }
}

pub fn default_shots(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Ap => 5,
        TaskKind::ApMc => 1,
        TaskKind::PpMc => 0,
        TaskKind::Mca => 20,
        TaskKind::McaMc => 5,
    }
}

impl FewShotPolicy {
    pub fn with_seed(seed: u64) -> Self {
        FewShotPolicy {
            seed,
            ..Default::default()
        }
    }

    pub fn shots_for(&self, kind: TaskKind) -> usize {
        self.shots.get(&kind).copied().unwrap_or_else(|| default_shots(kind))
    }

    pub fn set_shots(&mut self, kind: TaskKind, shots: usize) {
        self.shots.insert(kind, shots);
    }
}

/// Random stream used to pick the examples for one test instance.
pub fn fewshot_rng(policy_seed: u64, kind: TaskKind, language: Language, ordinal: u64) -> KeyedRng {
    let label = format!("eval/fewshot/{}/{}", kind.name(), language.code());
    KeyedRng::new(policy_seed, Purpose(fnv1a(label.as_bytes())), ordinal)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{id}: needs {needed} few-shot example(s) but the pool has only {available} eligible")]
    Policy { id: String, needed: usize, available: usize },
    #[error("{id}: {message}")]
    Instance { id: String, message: String },
    #[error("{id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: LmError,
    },
    #[error("all {count} instance(s) failed; first failure: {first}")]
    AllFailed { count: usize, first: String },
    #[error("no instances to evaluate")]
    Empty,
    #[error("invalid evaluation options: {0}")]
    Options(String),
}

impl EvalError {
    /// The backend error behind this failure, if any.
    pub fn backend_error(&self) -> Option<&LmError> {
        match self {
            EvalError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Pool grouped by (kind, language), keeping input order.
#[derive(Debug, Clone, Default)]
pub struct ExamplePool<'a> {
    groups: BTreeMap<(TaskKind, Language), Vec<&'a TaskInstance>>,
}

impl<'a> ExamplePool<'a> {
    pub fn new(pool: &'a [TaskInstance]) -> Self {
        let mut groups: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for instance in pool {
            groups.entry((instance.kind, instance.language)).or_default().push(instance);
        }
        ExamplePool { groups }
    }

    /// Same-kind, same-language instances that share no source with `instance`.
    pub fn eligible(&self, instance: &TaskInstance) -> Vec<&'a TaskInstance> {
        let Some(group) = self.groups.get(&(instance.kind, instance.language)) else {
            return Vec::new();
        };
        group
            .iter()
            .copied()
            .filter(|candidate| {
                candidate.ordinal != instance.ordinal
                    && !candidate
                        .provenance
                        .sources
                        .iter()
                        .any(|s| instance.provenance.sources.contains(s))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prompt {
    Generation { text: String },
    /// Each candidate is scored as a continuation of `prefix`.
    Choice { prefix: String, candidates: Vec<String> },
}

impl Prompt {
    /// Full texts as seen by the model: one for generation, four for choice.
    pub fn rendered(&self) -> Vec<String> {
        match self {
            Prompt::Generation { text } => vec![text.clone()],
            Prompt::Choice { prefix, candidates } => candidates.iter().map(|c| format!("{prefix}{c}")).collect(),
        }
    }
}

/// Selected few-shot examples for `instance`, in prompt order.
pub fn select_examples<'a>(
    instance: &TaskInstance,
    policy: &FewShotPolicy,
    pool: &ExamplePool<'a>,
) -> Result<Vec<&'a TaskInstance>, EvalError> {
    let needed = policy.shots_for(instance.kind);
    if needed == 0 {
        return Ok(Vec::new());
    }
    let eligible = pool.eligible(instance);
    if eligible.len() < needed {
        return Err(EvalError::Policy {
            id: instance.id(),
            needed,
            available: eligible.len(),
        });
    }
    let mut rng = fewshot_rng(policy.seed, instance.kind, instance.language, instance.ordinal);
    Ok(rng
        .sample_indices(eligible.len(), needed)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

pub fn build_prompt(instance: &TaskInstance, policy: &FewShotPolicy, pool: &ExamplePool<'_>) -> Result<Prompt, EvalError> {
    let examples = select_examples(instance, policy, pool)?;
    let mut prefix = String::new();
    for example in &examples {
        prefix.push_str(&example.solved_text());
        prefix.push_str(SHOT_SEPARATOR);
    }
    Ok(if instance.kind.is_choice() {
        Prompt::Choice {
            prefix,
            candidates: instance.choices.clone(),
        }
    } else {
        prefix.push_str(&instance.prompt);
        Prompt::Generation { text: prefix }
    })
}

/// Number of solved examples in a rendered prompt (blocks before the last).
pub fn count_shots(rendered: &str) -> usize {
    rendered.split(SHOT_SEPARATOR).count() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Worker threads; never recorded in reports.
    #[serde(skip)]
    pub concurrency: usize,
    /// Rank candidates by mean instead of total log-probability.
    pub per_token: bool,
    /// Record failures and drop them from denominators instead of aborting.
    pub skip_errors: bool,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            concurrency: 1,
            per_token: false,
            skip_errors: false,
            max_new_tokens: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub task: TaskKind,
    pub language: Language,
    pub ordinal: u64,
    pub gold: Gold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<usize>,
    /// Ranking score per candidate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InstanceRecord {
    fn blank(instance: &TaskInstance) -> Self {
        InstanceRecord {
            id: instance.id(),
            task: instance.kind,
            language: instance.language,
            ordinal: instance.ordinal,
            gold: instance.gold.clone(),
            chosen: None,
            scores: Vec::new(),
            tie: false,
            generated: None,
            correct: false,
            error: None,
        }
    }

    fn failed(instance: &TaskInstance, error: &EvalError) -> Self {
        InstanceRecord {
            error: Some(error.to_string()),
            ..InstanceRecord::blank(instance)
        }
    }
}

/// Index of the maximum score; ties go to the lowest index and are flagged.
pub fn argmax_with_tie(scores: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
            tie = false;
        } else if s == scores[best] {
            tie = true;
        }
    }
    (best, tie)
}

pub fn eval_choice(
    instance: &TaskInstance,
    backend: &dyn LmBackend,
    policy: &FewShotPolicy,
    pool: &ExamplePool<'_>,
    options: &EvalOptions,
) -> Result<InstanceRecord, EvalError> {
    let gold = instance.gold_index().filter(|_| instance.choices.len() == CHOICES).ok_or_else(|| EvalError::Instance {
        id: instance.id(),
        message: "not a four-way choice instance".into(),
    })?;
    let Prompt::Choice { prefix, candidates } = build_prompt(instance, policy, pool)? else {
        unreachable!("choice instances build choice prompts")
    };
    let mut scores = Vec::with_capacity(CHOICES);
    for candidate in &candidates {
        let result = backend
            .score(&ScoreRequest::new(prefix.clone(), candidate.clone()))
            .map_err(|source| EvalError::Backend {
                id: instance.id(),
                source,
            })?;
        scores.push(if options.per_token {
            result.mean_logprob()
        } else {
            result.total_logprob
        });
    }
    let (chosen, tie) = argmax_with_tie(&scores);
    Ok(InstanceRecord {
        chosen: Some(chosen),
        scores,
        tie,
        correct: chosen == gold,
        ..InstanceRecord::blank(instance)
    })
}

/// Trim, lowercase, collapse whitespace runs, strip trailing punctuation.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || matches!(c, '…' | '。' | '«' | '»' | '“' | '”' | '’'))
        .trim_end()
        .to_string()
}

/// Compares a generated continuation with the gold answers. With several
/// answers the output is read as a comma-separated list in rank order.
pub fn answer_matches(generated: &str, gold: &[String]) -> bool {
    match gold {
        [] => false,
        [single] => normalize_answer(generated) == normalize_answer(single),
        many => {
            let produced: Vec<String> = generated.split(',').map(normalize_answer).collect();
            produced.len() >= many.len()
                && produced.iter().zip(many).all(|(p, g)| *p == normalize_answer(g))
        }
    }
}

pub fn eval_generation(
    instance: &TaskInstance,
    backend: &dyn LmBackend,
    policy: &FewShotPolicy,
    pool: &ExamplePool<'_>,
    options: &EvalOptions,
) -> Result<InstanceRecord, EvalError> {
    if instance.kind.is_choice() || instance.gold_answers().is_empty() {
        return Err(EvalError::Instance {
            id: instance.id(),
            message: "not a generation instance".into(),
        });
    }
    let Prompt::Generation { text } = build_prompt(instance, policy, pool)? else {
        unreachable!("generation instances build generation prompts")
    };
    let generated = backend
        .generate(&text, options.max_new_tokens, &[GENERATION_STOP.to_string()])
        .map_err(|source| EvalError::Backend {
            id: instance.id(),
            source,
        })?;
    Ok(InstanceRecord {
        correct: answer_matches(&generated, instance.gold_answers()),
        generated: Some(generated),
        ..InstanceRecord::blank(instance)
    })
}

pub fn eval_instance(
    instance: &TaskInstance,
    backend: &dyn LmBackend,
    policy: &FewShotPolicy,
    pool: &ExamplePool<'_>,
    options: &EvalOptions,
) -> Result<InstanceRecord, EvalError> {
    if instance.kind.is_choice() {
        eval_choice(instance, backend, policy, pool, options)
    } else {
        eval_generation(instance, backend, policy, pool, options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskKind,
    pub language: Language,
    pub shots: usize,
    /// Instances in the denominator.
    pub count: usize,
    pub correct: usize,
    pub failed: usize,
    /// `correct / count`; absent when every instance failed.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub task: TaskKind,
    pub languages: Vec<Language>,
    /// Unweighted mean of the per-language accuracies.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub backend: BackendDescriptor,
    pub policy: FewShotPolicy,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub rows: Vec<ReportRow>,
    pub non_en_average: Vec<AverageRow>,
    pub records: Vec<InstanceRecord>,
}

impl EvalReport {
    /// Rebuilds the aggregate rows from per-instance records.
    pub fn from_records(metadata: RunMetadata, mut records: Vec<InstanceRecord>) -> Self {
        records.sort_by(|a, b| (a.task, a.language, a.ordinal).cmp(&(b.task, b.language, b.ordinal)));
        let mut groups: BTreeMap<(TaskKind, Language), (usize, usize, usize)> = BTreeMap::new();
        for r in &records {
            let g = groups.entry((r.task, r.language)).or_default();
            if r.error.is_some() {
                g.2 += 1;
            } else {
                g.0 += 1;
                g.1 += usize::from(r.correct);
            }
        }
        let rows: Vec<ReportRow> = groups
            .into_iter()
            .map(|((task, language), (count, correct, failed))| ReportRow {
                task,
                language,
                shots: metadata.policy.shots_for(task),
                count,
                correct,
                failed,
                accuracy: (count > 0).then(|| correct as f64 / count as f64),
            })
            .collect();
        let non_en_average = TaskKind::ALL
            .into_iter()
            .filter_map(|task| {
                let cells: Vec<(Language, f64)> = rows
                    .iter()
                    .filter(|r| r.task == task && r.language != Language::En)
                    .filter_map(|r| r.accuracy.map(|a| (r.language, a)))
                    .collect();
                (!cells.is_empty()).then(|| AverageRow {
                    task,
                    languages: cells.iter().map(|c| c.0).collect(),
                    accuracy: cells.iter().map(|c| c.1).sum::<f64>() / cells.len() as f64,
                })
            })
            .collect();
        EvalReport {
            metadata,
            rows,
            non_en_average,
            records,
        }
    }

    pub fn row(&self, task: TaskKind, language: Language) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.task == task && r.language == language)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failed).sum()
    }

    /// Mean over every non-English (task, language) accuracy.
    pub fn non_en_overall(&self) -> Option<f64> {
        let cells: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.language != Language::En)
            .filter_map(|r| r.accuracy)
            .collect();
        (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
    }
}

/// Evaluates every instance and aggregates per (task, language). Few-shot
/// examples come from `pool`. The result does not depend on concurrency.
pub fn run_eval(
    instances: &[TaskInstance],
    backend: &dyn LmBackend,
    policy: &FewShotPolicy,
    pool: &[TaskInstance],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Empty);
    }
    if options.concurrency == 0 {
        return Err(EvalError::Options("concurrency must be at least 1".into()));
    }
    if options.max_new_tokens == 0 {
        return Err(EvalError::Options("max_new_tokens must be at least 1".into()));
    }
    let pool = ExamplePool::new(pool);
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency)
        .build()
        .map_err(|e| EvalError::Options(e.to_string()))?;
    let outcomes: Vec<Result<InstanceRecord, EvalError>> = workers.install(|| {
        instances
            .par_iter()
            .map(|instance| eval_instance(instance, backend, policy, &pool, options))
            .collect()
    });

    let mut records = Vec::with_capacity(outcomes.len());
    let mut first_error: Option<EvalError> = None;
    for (instance, outcome) in instances.iter().zip(outcomes) {
        match outcome {
            Ok(record) => records.push(record),
            Err(error) => {
                if !options.skip_errors {
                    return Err(error);
                }
                records.push(InstanceRecord::failed(instance, &error));
                first_error.get_or_insert(error);
            }
        }
    }
    if records.iter().all(|r| r.error.is_some()) {
        return Err(match first_error {
            Some(EvalError::Backend { id, source }) if records.len() == 1 => EvalError::Backend { id, source },
            first => EvalError::AllFailed {
                count: records.len(),
                first: first.map(|e| e.to_string()).unwrap_or_default(),
            },
        });
    }
    Ok(EvalReport::from_records(
        RunMetadata {
            backend: backend.descriptor().clone(),
            policy: policy.clone(),
            options: *options,
        },
        records,
    ))
}
