use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ecomadapt::catalog::{compute_aspect_stats, load_catalog, CatalogError, Language};
use ecomadapt::checkpoint::{
    merge_sweep, merge_with_threads, read_checkpoint, read_manifest, write_checkpoint, CheckpointError, EntryStatus,
    MergeSpec,
};
use ecomadapt::curve::{parse_scores_csv, MergeCurve};
use ecomadapt::eval::{
    perplexity, ppl_vs_length, render_language_table, render_summary_table, report_csv, run_eval, EvalError,
    EvalOptions, FewShotPolicy, PplPolicy, SummaryRow,
};
use ecomadapt::lm::{build_backend, BackendDescriptor, BackendKind, LmBackend, LmError, OracleBackend};
use ecomadapt::plan::{
    lr_at, mixture_schedule, schedule_csv, schedule_table, MixtureConfig, ScheduleConfig, Stream, TokenBudget,
};
use ecomadapt::ratio::Ratio;
use ecomadapt::taskgen::{generate, read_task_file, write_task_file, GenDiagnostic, TaskInstance, TaskKind};
use serde::Serialize;

use crate::config::{write_json, write_text, Artifact, FileConfig, RunEcho};
use crate::{Cli, CliError, Command, EvalArgs, GenArgs, IngestArgs, MergeArgs, MergeCurveArgs, MergeSweepArgs, PlanArgs, PplArgs};

/// Settings shared by every subcommand after merging the config file.
struct Context {
    file: FileConfig,
    seed: u64,
    concurrency: usize,
    backend: Option<BackendKind>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let concurrency = cli
        .global
        .concurrency
        .or(file.concurrency)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if concurrency == 0 {
        return Err(CliError::usage("--concurrency must be at least 1"));
    }
    let ctx = Context {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        backend: cli.global.backend.or(file.backend.as_ref().map(|b| b.kind)),
        concurrency,
        file,
    };
    match cli.command {
        Command::Ingest(args) => ingest(&ctx, args),
        Command::Gen(args) => gen(&ctx, args),
        Command::Eval(args) => eval(&ctx, args),
        Command::PplSweep(args) => ppl_sweep(&ctx, args),
        Command::Merge(args) => merge(&ctx, args),
        Command::MergeSweep(args) => sweep(&ctx, args),
        Command::MergeCurve(args) => merge_curve(args),
        Command::Plan(args) => plan(&ctx, args),
    }
}

fn catalog_error(e: CatalogError) -> CliError {
    CliError::data(e)
}

fn ingest(_ctx: &Context, args: IngestArgs) -> Result<(), CliError> {
    let catalog = load_catalog(&args.catalog).map_err(catalog_error)?;
    for d in &catalog.diagnostics {
        eprintln!("warning: {d}");
    }
    let stats = compute_aspect_stats(&catalog);
    println!(
        "{} listings, {} rejected lines, {} aspect tables (sha256 {})",
        catalog.len(),
        catalog.diagnostics.len(),
        stats.len(),
        catalog.source_digest
    );
    for lang in Language::ALL {
        let n = catalog.by_language(lang).count();
        if n > 0 {
            println!("  {lang}: {n} listings, {} aspect tables", stats.for_language(lang).count());
        }
    }
    if let Some(out) = args.out {
        #[derive(Serialize)]
        struct Settings<'a> {
            catalog: &'a Path,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            source_digest: &'a str,
            listings: usize,
            diagnostics: &'a [ecomadapt::catalog::LineDiagnostic],
            stats: &'a ecomadapt::catalog::AspectStats,
        }
        let echo = RunEcho {
            command: "ingest",
            settings: Settings { catalog: &args.catalog },
        };
        let body = Body {
            source_digest: &catalog.source_digest,
            listings: catalog.len(),
            diagnostics: &catalog.diagnostics,
            stats: &stats,
        };
        write_json(&out, &Artifact { config: &echo, body })?;
    }
    Ok(())
}

pub fn task_file_name(kind: TaskKind, language: Language) -> String {
    format!("{}.{}.jsonl", kind.name(), language.code())
}

fn gen(ctx: &Context, args: GenArgs) -> Result<(), CliError> {
    if args.tasks.is_empty() {
        return Err(CliError::usage(format!(
            "--tasks is required (valid: {})",
            TaskKind::ALL.map(TaskKind::name).join(", ")
        )));
    }
    let requested = if !args.langs.is_empty() {
        Some(args.langs.clone())
    } else {
        ctx.file.languages.clone()
    };
    let mut generator = ctx.file.generator.clone().unwrap_or_default();
    generator.seed = ctx.seed;
    generator.validate().map_err(CliError::usage)?;

    let catalog = load_catalog(&args.catalog).map_err(catalog_error)?;
    for d in &catalog.diagnostics {
        eprintln!("warning: catalog {d}");
    }
    // Without an explicit list, every language present in the catalog.
    let languages = requested.unwrap_or_else(|| {
        Language::ALL
            .into_iter()
            .filter(|&l| catalog.by_language(l).next().is_some())
            .collect()
    });
    if languages.is_empty() {
        return Err(CliError::data(format!("no eligible listings in {}", args.catalog.display())));
    }
    let stats = compute_aspect_stats(&catalog);

    #[derive(Serialize)]
    struct Output {
        task: TaskKind,
        language: Language,
        file: String,
        requested: usize,
        count: usize,
    }
    let mut outputs = Vec::new();
    let mut diagnostics: Vec<GenDiagnostic> = Vec::new();
    let mut files = Vec::new();
    for &kind in &args.tasks {
        for &lang in &languages {
            let out = generate(kind, &catalog, &stats, &generator, lang, args.count).map_err(CliError::usage)?;
            if out.instances.is_empty() && args.count > 0 {
                return Err(CliError::data(format!(
                    "no eligible listings for {} in {} ({} catalog listings)",
                    kind.name(),
                    lang,
                    catalog.by_language(lang).count()
                )));
            }
            let file = task_file_name(kind, lang);
            outputs.push(Output {
                task: kind,
                language: lang,
                file: file.clone(),
                requested: args.count,
                count: out.instances.len(),
            });
            diagnostics.extend(out.diagnostics);
            files.push((file, out.instances));
        }
    }

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    for (file, instances) in &files {
        let path = args.out.join(file);
        write_task_file(&path, instances).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    }
    for d in &diagnostics {
        eprintln!("note: {d}");
    }
    for o in &outputs {
        println!("{}: {} of {} instances", o.file, o.count, o.requested);
    }

    #[derive(Serialize)]
    struct Settings<'a> {
        catalog: &'a Path,
        tasks: &'a [TaskKind],
        languages: &'a [Language],
        count: usize,
        generator: &'a ecomadapt::taskgen::GeneratorConfig,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        catalog_digest: &'a str,
        outputs: Vec<Output>,
        diagnostics: Vec<GenDiagnostic>,
    }
    let echo = RunEcho {
        command: "gen",
        settings: Settings {
            catalog: &args.catalog,
            tasks: &args.tasks,
            languages: &languages,
            count: args.count,
            generator: &generator,
        },
    };
    let body = Body {
        catalog_digest: &catalog.source_digest,
        outputs,
        diagnostics,
    };
    write_json(&args.out.join("gen_summary.json"), &Artifact { config: &echo, body })
}

/// Task files in `dir` named `{task}.{lang}.jsonl`, in task then language order.
fn discover_task_files(dir: &Path) -> Result<Vec<(TaskKind, Language, PathBuf)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".jsonl") else { continue };
        let Some((task, lang)) = stem.split_once('.') else { continue };
        if let (Ok(kind), Ok(language)) = (task.parse::<TaskKind>(), lang.parse::<Language>()) {
            if kind.name() == task {
                found.push((kind, language, entry.path()));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn descriptor(ctx: &Context, base_url: Option<&String>, model: Option<&String>) -> Result<BackendDescriptor, CliError> {
    let Some(kind) = ctx.backend else {
        return Err(CliError::usage(
            "no backend selected: pass --backend {remote,mock-uniform,mock-oracle,mock-hash} or set backend in --config",
        ));
    };
    let mut d = ctx.file.backend.clone().unwrap_or_default();
    d.kind = kind;
    if let Some(url) = base_url {
        d.base_url = Some(url.clone());
    }
    if let Some(model) = model {
        d.model = Some(model.clone());
    }
    d.validate().map_err(CliError::usage)?;
    Ok(d)
}

fn hint(error: &LmError, descriptor: &BackendDescriptor) -> String {
    match error {
        LmError::Capability(_) => "hint: choice tasks and perplexity need per-token log-probabilities with echo; \
             use a completion endpoint that supports `echo` and `logprobs`, or a mock backend for a dry run"
            .into(),
        LmError::ContextOverflow { .. } => {
            "hint: lower the few-shot counts with --shots or use a model with a longer context".into()
        }
        LmError::Transport { .. } => {
            "hint: check --base-url and that the server is reachable; retries are set by backend.max_retries".into()
        }
        LmError::Rejected { status: 401 | 403, .. } => {
            format!("hint: export the bearer token in ${}", descriptor.auth_env)
        }
        _ => "hint: check the backend settings in --config".into(),
    }
}

fn eval_error(error: EvalError, descriptor: &BackendDescriptor) -> CliError {
    match &error {
        EvalError::Backend { source, .. } => {
            let hint = hint(source, descriptor);
            CliError::backend(format!("{error}\n{hint}"))
        }
        EvalError::AllFailed { .. } => CliError::backend(error),
        EvalError::Policy { .. } => {
            CliError::usage(format!("{error}\nhint: lower --shots or generate more instances per task"))
        }
        EvalError::Options(_) => CliError::usage(error),
        EvalError::Instance { .. } | EvalError::Empty => CliError::data(error),
    }
}

fn parse_shots(spec: &[String]) -> Result<BTreeMap<TaskKind, usize>, CliError> {
    spec.iter()
        .map(|item| {
            let (task, n) = item
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--shots entry {item:?} is not task=count")))?;
            let task: TaskKind = task.trim().parse().map_err(CliError::usage)?;
            let n: usize = n.trim().parse().map_err(|e| CliError::usage(format!("--shots {item:?}: {e}")))?;
            Ok((task, n))
        })
        .collect()
}

fn eval(ctx: &Context, args: EvalArgs) -> Result<(), CliError> {
    let descriptor = descriptor(ctx, args.base_url.as_ref(), args.model.as_ref())?;
    let mut policy = FewShotPolicy::with_seed(ctx.seed);
    for (task, n) in ctx.file.shots.clone().unwrap_or_default().into_iter().chain(parse_shots(&args.shots)?) {
        policy.set_shots(task, n);
    }
    let languages = if !args.langs.is_empty() {
        Some(args.langs.clone())
    } else {
        ctx.file.languages.clone()
    };
    let files: Vec<_> = discover_task_files(&args.tasks_dir)?
        .into_iter()
        .filter(|(t, l, _)| {
            (args.tasks.is_empty() || args.tasks.contains(t)) && languages.as_ref().is_none_or(|ls| ls.contains(l))
        })
        .collect();
    if files.is_empty() {
        return Err(CliError::data(format!("no matching task files in {}", args.tasks_dir.display())));
    }
    let mut instances: Vec<TaskInstance> = Vec::new();
    for (_, _, path) in &files {
        instances.extend(read_task_file(path).map_err(CliError::data)?);
    }

    let backend: Box<dyn LmBackend> = match descriptor.kind {
        BackendKind::MockOracle => Box::new(OracleBackend::from_instances(descriptor.clone(), &instances)),
        _ => build_backend(&descriptor).map_err(CliError::usage)?,
    };
    let options = EvalOptions {
        concurrency: ctx.concurrency,
        per_token: args.per_token,
        skip_errors: args.skip_errors,
        ..Default::default()
    };
    let report = run_eval(&instances, backend.as_ref(), &policy, &instances, &options)
        .map_err(|e| eval_error(e, &descriptor))?;

    let table = format!(
        "{}\n{}",
        render_summary_table(&[SummaryRow::from_report(args.label.clone(), &report)]),
        render_language_table(&report)
    );
    #[derive(Serialize)]
    struct Settings<'a> {
        tasks_dir: &'a Path,
        files: Vec<String>,
        seed: u64,
        label: &'a str,
    }
    let echo = RunEcho {
        command: "eval",
        settings: Settings {
            tasks_dir: &args.tasks_dir,
            files: files
                .iter()
                .map(|(t, l, _)| task_file_name(*t, *l))
                .collect(),
            seed: ctx.seed,
            label: &args.label,
        },
    };
    write_json(&args.out.join("report.json"), &Artifact { config: &echo, body: &report })?;
    write_text(&args.out.join("report.csv"), &report_csv(&report))?;
    write_text(&args.out.join("table.txt"), &table)?;
    print!("{table}");
    if report.failures() > 0 {
        eprintln!("warning: {} instance(s) failed and were excluded", report.failures());
    }
    Ok(())
}

fn read_texts(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    #[derive(serde::Deserialize)]
    struct Line {
        text: String,
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line)
            .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(parsed.text);
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{}: no texts", path.display())));
    }
    Ok(out)
}

fn ppl_sweep(ctx: &Context, args: PplArgs) -> Result<(), CliError> {
    let descriptor = descriptor(ctx, args.base_url.as_ref(), args.model.as_ref())?;
    if descriptor.kind == BackendKind::MockOracle {
        return Err(CliError::usage("mock-oracle only answers task prompts; use another backend for perplexity"));
    }
    let backend = build_backend(&descriptor).map_err(CliError::usage)?;
    let texts = read_texts(&args.texts)?;
    let policy = match (args.window, args.stride) {
        (Some(w), Some(s)) => PplPolicy::sliding(w, s),
        _ => PplPolicy::default(),
    };
    let sweep = ppl_vs_length(&texts, backend.as_ref(), &args.lengths, args.tolerance)
        .map_err(|e| eval_error(e, &descriptor))?;
    let corpus = perplexity(&texts, backend.as_ref(), policy).map_err(|e| eval_error(e, &descriptor))?;

    println!("corpus perplexity {:.4} over {} tokens", corpus.perplexity, corpus.tokens);
    println!("{:>8} {:>6} {:>10} {:>12} trend", "length", "texts", "tokens", "ppl");
    for row in &sweep.rows {
        let ppl = row.ppl.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
        let trend = row
            .trend
            .map(|t| format!("{t:?}").to_lowercase())
            .unwrap_or_else(|| "-".into());
        println!("{:>8} {:>6} {:>10} {:>12} {trend}", row.length, row.texts, row.tokens, ppl);
    }
    if let Some(onset) = sweep.rise_onset {
        println!("flat through {onset} tokens, rising after");
    }
    for d in &sweep.diagnostics {
        eprintln!("note: {d}");
    }

    #[derive(Serialize)]
    struct Settings<'a> {
        texts: &'a Path,
        lengths: &'a [usize],
        tolerance: f64,
        policy: PplPolicy,
        backend: &'a BackendDescriptor,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        corpus: &'a ecomadapt::eval::PerplexityResult,
        sweep: &'a ecomadapt::eval::PplReport,
    }
    let echo = RunEcho {
        command: "ppl-sweep",
        settings: Settings {
            texts: &args.texts,
            lengths: &args.lengths,
            tolerance: args.tolerance,
            policy,
            backend: &descriptor,
        },
    };
    write_text(&args.out.join("ppl.csv"), &sweep.to_csv())?;
    write_json(
        &args.out.join("ppl.json"),
        &Artifact {
            config: &echo,
            body: Body {
                corpus: &corpus,
                sweep: &sweep,
            },
        },
    )
}

fn checkpoint_error(error: CheckpointError) -> CliError {
    match error {
        CheckpointError::InvalidMerge(_) => CliError::usage(error),
        CheckpointError::Incompatible(report) => CliError::data(format!("checkpoints are incompatible:\n{report}")),
        other => CliError::data(other),
    }
}

fn merge(ctx: &Context, args: MergeArgs) -> Result<(), CliError> {
    let spec = MergeSpec::new(args.alpha).with_accumulation(args.accumulation);
    spec.weights_f64().map_err(checkpoint_error)?;
    let base = read_checkpoint(&args.base).map_err(checkpoint_error)?;
    let adapted = read_checkpoint(&args.adapted).map_err(checkpoint_error)?;
    let merged = merge_with_threads(&base, &adapted, &spec, ctx.concurrency).map_err(checkpoint_error)?;
    write_checkpoint(&args.out, &merged).map_err(checkpoint_error)?;
    println!(
        "{}: alpha {} ({} tensors, digest {})",
        args.out.display(),
        args.alpha,
        merged.len(),
        merged.content_digest()
    );
    Ok(())
}

fn sweep(ctx: &Context, args: MergeSweepArgs) -> Result<(), CliError> {
    ecomadapt::checkpoint::validate_alphas(&args.alphas).map_err(checkpoint_error)?;
    let base = read_checkpoint(&args.base).map_err(checkpoint_error)?;
    let adapted = read_checkpoint(&args.adapted).map_err(checkpoint_error)?;
    let pool = rayon_pool(ctx.concurrency)?;
    let manifest = pool
        .install(|| merge_sweep(&base, &adapted, &args.alphas, args.accumulation, &args.out_dir))
        .map_err(checkpoint_error)?;
    for e in &manifest.entries {
        match &e.error {
            None => println!("alpha {}: {}", e.alpha, e.path),
            Some(err) => eprintln!("alpha {}: failed: {err}", e.alpha),
        }
    }
    if !manifest.complete {
        return Err(CliError::data("sweep incomplete; see manifest.json"));
    }
    Ok(())
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn merge_curve(args: MergeCurveArgs) -> Result<(), CliError> {
    let manifest = read_manifest(&args.manifest).map_err(checkpoint_error)?;
    let text = std::fs::read_to_string(&args.scores)
        .map_err(|e| CliError::data(format!("{}: {e}", args.scores.display())))?;
    let points = parse_scores_csv(&text).map_err(|e| CliError::data(format!("{}: {e}", args.scores.display())))?;
    let merged: BTreeSet<Ratio> = manifest
        .entries
        .iter()
        .filter(|e| e.status == EntryStatus::Ok)
        .map(|e| e.alpha)
        .collect();
    let scored: BTreeSet<Ratio> = points.iter().map(|p| p.alpha).collect();
    if merged != scored || scored.len() != points.len() {
        let list = |s: Vec<&Ratio>| s.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ");
        return Err(CliError::usage(format!(
            "alpha mismatch between manifest and scores: unscored [{}], not in manifest [{}]{}",
            list(merged.difference(&scored).collect()),
            list(scored.difference(&merged).collect()),
            if scored.len() != points.len() { ", duplicate rows in scores" } else { "" }
        )));
    }
    let curve = MergeCurve::from_points(points).map_err(CliError::data)?;
    for (name, fit) in [("general", &curve.general_fit), ("ecom", &curve.ecom_fit)] {
        let r2 = fit.r_squared.map(|r| format!("{r:.6}")).unwrap_or_else(|| "n/a".into());
        println!("{name}: slope {:.6} intercept {:.6} r2 {r2}", fit.slope, fit.intercept);
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        manifest: &'a Path,
        scores: &'a Path,
    }
    let echo = RunEcho {
        command: "merge-curve",
        settings: Settings {
            manifest: &args.manifest,
            scores: &args.scores,
        },
    };
    write_text(&args.out.join("curve.csv"), &curve.to_csv())?;
    write_json(&args.out.join("curve.json"), &Artifact { config: &echo, body: &curve })
}

fn plan(ctx: &Context, args: PlanArgs) -> Result<(), CliError> {
    let mut schedule = ScheduleConfig::for_profile(args.profile);
    if let Some(v) = args.lr_max {
        schedule.lr_max = v;
    }
    if let Some(v) = args.lr_min {
        schedule.lr_min = v;
    }
    if let Some(v) = args.warmup_steps {
        schedule.warmup_steps = v;
    }
    if let Some(v) = args.total_steps {
        schedule.total_steps = v;
    }
    schedule.validate().map_err(CliError::usage)?;
    let mixture = MixtureConfig {
        domain_ratio: args.domain_ratio,
        batch_tokens: args.batch_tokens,
        seed: ctx.seed,
        general_non_en_ratio: args.non_en_ratio,
    };
    mixture.validate().map_err(CliError::usage)?;
    let table = schedule_table(&schedule, args.stride).map_err(CliError::usage)?;
    let budget = TokenBudget::from_steps(&mixture, schedule.total_steps).map_err(CliError::usage)?;
    let items = mixture_schedule(&mixture, args.mixture_items).map_err(CliError::usage)?;
    let labels: String = items
        .iter()
        .map(|i| match i.stream {
            Stream::Domain => 'D',
            Stream::General => 'G',
            Stream::GeneralNonEn => 'N',
        })
        .collect();

    #[derive(Serialize)]
    struct Settings {
        schedule: ScheduleConfig,
        stride: u64,
        mixture: MixtureConfig,
        mixture_items: u64,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        lr_at_warmup: f64,
        lr_at_end: f64,
        budget: &'a TokenBudget,
        mixture_labels: String,
        mixture_items: &'a [ecomadapt::plan::MixtureItem],
    }
    let echo = RunEcho {
        command: "plan",
        settings: Settings {
            schedule,
            stride: args.stride,
            mixture,
            mixture_items: args.mixture_items,
        },
    };
    let body = Body {
        lr_at_warmup: lr_at(schedule.warmup_steps, &schedule).map_err(CliError::usage)?,
        lr_at_end: lr_at(schedule.total_steps, &schedule).map_err(CliError::usage)?,
        budget: &budget,
        mixture_labels: labels,
        mixture_items: &items,
    };
    let record = Artifact { config: &echo, body };
    let csv = schedule_csv(&table);
    match args.out {
        Some(dir) => {
            write_text(&dir.join("schedule.csv"), &csv)?;
            write_json(&dir.join("plan.json"), &record)?;
            println!("total tokens {} ({} domain, {} general)", budget.total_tokens, budget.domain_tokens, budget.general_tokens);
        }
        None => {
            print!("{csv}");
            println!("{}", serde_json::to_string_pretty(&record).map_err(CliError::data)?);
        }
    }
    Ok(())
}
