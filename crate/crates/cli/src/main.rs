//! `ecomadapt` command-line entry point.
//!
//! Exit codes: 0 success, 1 data error, 2 usage or config error,
//! 3 backend error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecomadapt::catalog::Language;
use ecomadapt::checkpoint::Precision;
use ecomadapt::lm::BackendKind;
use ecomadapt::plan::Profile;
use ecomadapt::ratio::Ratio;
use ecomadapt::taskgen::TaskKind;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub const DATA: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const BACKEND: u8 = 3;

    pub fn data(error: impl fmt::Display) -> Self {
        CliError {
            code: Self::DATA,
            error: anyhow::anyhow!("{error}"),
        }
    }

    pub fn usage(error: impl fmt::Display) -> Self {
        CliError {
            code: Self::USAGE,
            error: anyhow::anyhow!("{error}"),
        }
    }

    pub fn backend(error: impl fmt::Display) -> Self {
        CliError {
            code: Self::BACKEND,
            error: anyhow::anyhow!("{error}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ecomadapt", version, about = "E-commerce benchmark, evaluation, merging and planning toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation and merging.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true, value_parser = parse_with::<BackendKind>)]
    pub backend: Option<BackendKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a catalog and write aspect statistics.
    Ingest(IngestArgs),
    /// Generate benchmark task files from a catalog.
    Gen(GenArgs),
    /// Evaluate task files against a backend.
    Eval(EvalArgs),
    /// Perplexity as a function of input length.
    PplSweep(PplArgs),
    /// Weighted average of two checkpoints.
    Merge(MergeArgs),
    /// One merge per alpha plus a manifest.
    MergeSweep(MergeSweepArgs),
    /// Trade-off CSV and linear fits for a merge sweep.
    MergeCurve(MergeCurveArgs),
    /// Learning-rate schedule, token budget and mixture.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Where to write the statistics JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<TaskKind>)]
    pub tasks: Vec<TaskKind>,
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<Language>)]
    pub langs: Vec<Language>,
    /// Instances per task and language.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `{task}.{lang}.jsonl` files.
    #[arg(long)]
    pub tasks_dir: PathBuf,
    /// Restrict to these tasks; default every task file found.
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<TaskKind>)]
    pub tasks: Vec<TaskKind>,
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<Language>)]
    pub langs: Vec<Language>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Few-shot overrides, e.g. `mca=10,ap=3`.
    #[arg(long, value_delimiter = ',')]
    pub shots: Vec<String>,
    /// Rank choices by mean per-token log-probability.
    #[arg(long)]
    pub per_token: bool,
    /// Record failed instances and drop them from denominators.
    #[arg(long)]
    pub skip_errors: bool,
    #[arg(long, default_value = "model")]
    pub label: String,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct PplArgs {
    /// JSONL file with one `{"text": ...}` object per line.
    #[arg(long)]
    pub texts: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384,32768")]
    pub lengths: Vec<usize>,
    /// Relative change between neighbouring lengths still counted as flat.
    #[arg(long, default_value_t = ecomadapt::eval::DEFAULT_TREND_TOLERANCE)]
    pub tolerance: f64,
    /// Sliding window for the corpus perplexity, in tokens.
    #[arg(long, requires = "stride")]
    pub window: Option<usize>,
    #[arg(long, requires = "window")]
    pub stride: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub adapted: PathBuf,
    /// Weight of the adapted checkpoint, as a decimal or `p/q`.
    #[arg(long, value_parser = parse_with::<Ratio>)]
    pub alpha: Ratio,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "f32", value_parser = parse_with::<Precision>)]
    pub accumulation: Precision,
}

#[derive(Debug, Args)]
pub struct MergeSweepArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub adapted: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_with::<Ratio>)]
    pub alphas: Vec<Ratio>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "f32", value_parser = parse_with::<Precision>)]
    pub accumulation: Precision,
}

#[derive(Debug, Args)]
pub struct MergeCurveArgs {
    /// `manifest.json` written by merge-sweep.
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV `alpha,general_score,ecom_score`, one row per merged checkpoint.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, default_value = "8b", value_parser = parse_with::<Profile>)]
    pub profile: Profile,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// Schedule table stride in steps.
    #[arg(long, default_value_t = 1000)]
    pub stride: u64,
    #[arg(long, default_value_t = ecomadapt::plan::DEFAULT_BATCH_TOKENS)]
    pub batch_tokens: u64,
    #[arg(long, default_value = "0.5", value_parser = parse_with::<Ratio>)]
    pub domain_ratio: Ratio,
    /// Non-English share within the general stream.
    #[arg(long, value_parser = parse_with::<Ratio>)]
    pub non_en_ratio: Option<Ratio>,
    /// Length of the mixture label sample written to the plan record.
    #[arg(long, default_value_t = 100)]
    pub mixture_items: u64,
    /// Write `schedule.csv` and `plan.json` here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_with<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
