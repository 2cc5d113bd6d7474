//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use ecomadapt::catalog::{compute_aspect_stats, load_catalog, Language};
use ecomadapt::checkpoint::{
    merge, merge_with_threads, Checkpoint, CheckpointError, DType, MergeSpec, Precision, Tensor,
};
use ecomadapt::eval::{
    build_prompt, count_shots, default_shots, ppl_vs_length, run_eval, EvalOptions, ExamplePool, FewShotPolicy,
    Trend, DEFAULT_TREND_TOLERANCE,
};
use ecomadapt::lm::{BackendDescriptor, BackendKind, HashBackend, OracleBackend, PositionPenalty, UniformBackend};
use ecomadapt::plan::{lr_at, mixture_stream, MixtureConfig, ScheduleConfig, Stream, TokenBudget};
use ecomadapt::ratio::Ratio;
use ecomadapt::taskgen::{generate, GeneratorConfig, TaskInstance, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const MC: [TaskKind; 3] = [TaskKind::ApMc, TaskKind::PpMc, TaskKind::McaMc];

fn golden_templates() -> Outcome {
    let catalog = load_catalog(common::fixture("appendix.jsonl")).map_err(|e| e.to_string())?;
    let stats = compute_aspect_stats(&catalog);
    let cases = [
        (TaskKind::Ap, "vg-ds3", "ap.txt"),
        (TaskKind::ApMc, "vg-ds3", "ap_mc.txt"),
        (TaskKind::PpMc, "bag-lv", "pp_mc.txt"),
        (
            TaskKind::Mca,
            "Clothing, Shoes & Accessories:Women:Women's Clothing:Coats, Jackets & Vests#Outer Shell Material",
            "mca.txt",
        ),
        (TaskKind::McaMc, "Cameras & Photo:Digital Cameras#Brand", "mca_mc.txt"),
    ];
    for (kind, source, file) in cases {
        let out = generate(kind, &catalog, &stats, &GeneratorConfig::with_seed(0), Language::En, 10_000)
            .map_err(|e| e.to_string())?;
        let inst = out
            .instances
            .iter()
            .find(|i| i.provenance.sources == [source])
            .ok_or_else(|| format!("no {} instance", kind.name()))?;
        let text = if kind.is_choice() {
            inst.candidates_in_construction_order().join("\n\n") + "\n"
        } else {
            format!("{}\n", inst.prompt)
        };
        ensure!(text == common::golden(file), "{file} differs");
    }
    Ok("5 golden files byte-identical".into())
}

fn parse_cents(text: &str) -> u128 {
    let amount = text.rsplit('$').next().unwrap_or("").trim_end_matches('.');
    let (whole, frac) = amount.split_once('.').unwrap_or(("0", "0"));
    whole.parse::<u128>().unwrap_or(0) * 100 + frac.parse::<u128>().unwrap_or(0)
}

fn price_factor_law() -> Outcome {
    let catalog = common::synthetic_catalog(&[Language::En], 80, 1);
    let stats = compute_aspect_stats(&catalog);
    let out = generate(TaskKind::PpMc, &catalog, &stats, &GeneratorConfig::with_seed(3), Language::En, 1000)
        .map_err(|e| e.to_string())?;
    ensure!(out.instances.len() == 1000, "{} instances", out.instances.len());
    let expected = [Ratio::new(1, 10), Ratio::new(1, 4), Ratio::new(2, 1)];
    for inst in &out.instances {
        let gold = inst.gold_index().ok_or("no gold")?;
        let true_cents = parse_cents(&inst.choices[gold]);
        let mut ratios = Vec::new();
        for (c, text) in inst.choices.iter().enumerate().filter(|(c, _)| *c != gold) {
            let cents = parse_cents(text);
            let r = expected.iter().copied().find(|r| {
                let (n, d) = (r.num() as u128, r.den() as u128);
                let exact2 = 2 * true_cents * n;
                2 * d * cents <= exact2 + d && exact2 < 2 * d * cents + d
            });
            ratios.push(r.ok_or_else(|| format!("{}: choice {c} off-factor", inst.id()))?);
        }
        ratios.sort();
        ensure!(ratios == expected, "{}: factors {ratios:?}", inst.id());
    }
    Ok("1000 instances, factor multiset {0.1, 0.25, 2}".into())
}

fn oracle_and_chance() -> Outcome {
    let langs = [Language::En, Language::De, Language::Fr];
    let catalog = common::synthetic_catalog(&langs, 15, 5);
    let instances = common::generate_all(&catalog, &TaskKind::ALL, &langs, 1, 60);
    let oracle = OracleBackend::from_instances(BackendDescriptor::of_kind(BackendKind::MockOracle), &instances);
    let opts = EvalOptions {
        concurrency: 8,
        ..Default::default()
    };
    let report = run_eval(&instances, &oracle, &FewShotPolicy::default(), &instances, &opts).map_err(|e| e.to_string())?;
    for row in &report.rows {
        ensure!(row.accuracy == Some(1.0), "oracle {} {}: {:?}", row.task.name(), row.language.code(), row.accuracy);
    }
    let catalog = common::synthetic_catalog(&[Language::En], 200, 12);
    let instances = common::generate_all(&catalog, &MC, &[Language::En], 17, 2000);
    let report = run_eval(&instances, &HashBackend::with_seed(3), &FewShotPolicy::default(), &instances, &opts)
        .map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for kind in MC {
        let row = report.row(kind, Language::En).ok_or("missing row")?;
        let acc = row.accuracy.unwrap_or(f64::NAN);
        ensure!(row.count >= 2000 && (0.22..=0.28).contains(&acc), "mock-hash {}: {acc} over {}", kind.name(), row.count);
        parts.push(format!("{}={acc:.3}", kind.name()));
    }
    Ok(format!("oracle 1.000 on {} rows; mock-hash {}", 15, parts.join(" ")))
}

fn few_shot_defaults() -> Outcome {
    let catalog = common::synthetic_catalog(&[Language::En, Language::Es], 12, 4);
    let instances = common::generate_all(&catalog, &TaskKind::ALL, &[Language::En, Language::Es], 4, 40);
    let pool = ExamplePool::new(&instances);
    let policy = FewShotPolicy::default();
    let expected = [
        (TaskKind::PpMc, 0),
        (TaskKind::ApMc, 1),
        (TaskKind::Ap, 5),
        (TaskKind::McaMc, 5),
        (TaskKind::Mca, 20),
    ];
    for (kind, shots) in expected {
        ensure!(default_shots(kind) == shots, "{} default {}", kind.name(), default_shots(kind));
    }
    for inst in &instances {
        let prompt = build_prompt(inst, &policy, &pool).map_err(|e| e.to_string())?;
        for rendered in prompt.rendered() {
            let blocks: Vec<&str> = rendered.split("\n\n").collect();
            let solved = blocks[..blocks.len() - 1]
                .iter()
                .filter(|b| instances.iter().any(|p| p.kind == inst.kind && p.solved_text() == **b))
                .count();
            let want = expected.iter().find(|(k, _)| *k == inst.kind).unwrap().1;
            ensure!(solved == want && count_shots(&rendered) == want, "{}: {solved} shots", inst.id());
        }
    }
    Ok("PP^MC:0 AP^MC:1 AP:5 MCA^MC:5 MCA:20 in parsed prompts".into())
}

fn random_f32(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * 10f32.powi(rng.gen_range(-3..3))).collect()
}

fn f32_checkpoint(tensors: Vec<(String, Vec<f32>)>) -> Checkpoint {
    let mut c = Checkpoint::new("acceptance");
    for (name, values) in tensors {
        let t = Tensor::from_f32(vec![values.len() as u64], &values).expect("valid tensor");
        c.insert(name, t).expect("unique names");
    }
    c
}

fn merge_pair(seed: u64, tensors: usize, len: usize) -> (Checkpoint, Checkpoint) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = f32_checkpoint((0..tensors).map(|t| (format!("t{t}"), random_f32(&mut rng, len))).collect());
    let adapted = f32_checkpoint((0..tensors).map(|t| (format!("t{t}"), random_f32(&mut rng, len))).collect());
    (base, adapted)
}

fn ulp(x: f32) -> f64 {
    let x = x.abs();
    (f32::from_bits(x.to_bits() + 1) - x) as f64
}

fn merge_correctness() -> Outcome {
    let e = |e: CheckpointError| e.to_string();
    let fixture = |v: Vec<f32>| f32_checkpoint(vec![("w".into(), v)]);
    let half = merge(&fixture(vec![1.0, 2.0]), &fixture(vec![3.0, 4.0]), &MergeSpec::new(Ratio::new(1, 2))).map_err(e)?;
    ensure!(half.get("w").unwrap().to_f32_vec() == [2.0, 3.0], "[1,2]/[3,4] midpoint wrong");

    let (base, adapted) = merge_pair(1, 4, 50_000);
    let zero = merge(&base, &adapted, &MergeSpec::new(Ratio::ZERO)).map_err(e)?;
    let one = merge(&base, &adapted, &MergeSpec::new(Ratio::ONE)).map_err(e)?;
    ensure!(zero.content_digest() == base.content_digest(), "alpha 0 differs from base");
    ensure!(one.content_digest() == adapted.content_digest(), "alpha 1 differs from adapted");

    let mut deviations = 0u64;
    for alpha in [Ratio::new(1, 10), Ratio::new(1, 3), Ratio::new(1, 2), Ratio::new(3, 4)] {
        let m = merge(&base, &adapted, &MergeSpec::new(alpha)).map_err(e)?;
        let (wb, wa) = (alpha.complement().unwrap().to_f64() as f32 as f64, alpha.to_f64() as f32 as f64);
        for (name, b) in base.tensors() {
            let (bv, av) = (b.to_f64_vec(), adapted.get(name).unwrap().to_f64_vec());
            let got = m.get(name).unwrap().to_f32_vec();
            for i in 0..bv.len() {
                let want = ((wb * bv[i]) as f32 as f64 + (wa * av[i]) as f32 as f64) as f32;
                deviations += u64::from(got[i].to_bits() != want.to_bits());
            }
        }
    }
    ensure!(deviations == 0, "{deviations} elements deviate from the scalar oracle");

    let at = |n| merge(&base, &adapted, &MergeSpec::new(Ratio::new(n, 4)));
    let (q1, q2, q3) = (at(1).map_err(e)?, at(2).map_err(e)?, at(3).map_err(e)?);
    let mut worst = 0f64;
    for (name, b) in base.tensors() {
        let a = adapted.get(name).unwrap().to_f32_vec();
        let (m1, m2, m3) = (q1.get(name).unwrap().to_f64_vec(), q2.get(name).unwrap().to_f64_vec(), q3.get(name).unwrap().to_f64_vec());
        for (i, bv) in b.to_f32_vec().into_iter().enumerate() {
            worst = worst.max((m2[i] - 0.5 * (m1[i] + m3[i])).abs() / ulp(bv.abs().max(a[i].abs())));
        }
    }
    ensure!(worst <= 1.0, "linearity deviation {worst} ulp");

    // 100 MB per checkpoint.
    let (big_base, big_adapted) = merge_pair(2, 25, 1_000_000);
    let start = Instant::now();
    let big = merge(&big_base, &big_adapted, &MergeSpec::new(Ratio::new(1, 2))).map_err(e)?;
    let elapsed = start.elapsed();
    ensure!(big.data_bytes() == 100_000_000, "size {}", big.data_bytes());
    ensure!(elapsed < Duration::from_secs(30), "100 MB merge took {elapsed:?}");
    Ok(format!("oracle deviations 0, linearity {worst} ulp, 100 MB merge {:.2}s", elapsed.as_secs_f64()))
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let mut c = Checkpoint::new(format!("p{case}"));
        for t in 0..rng.gen_range(1..6) {
            let dtype = [DType::F32, DType::F16, DType::Bf16][rng.gen_range(0..3)];
            let shape: Vec<u64> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..9)).collect();
            let n = shape.iter().product::<u64>() as usize * dtype.size();
            let data = (0..n).map(|_| rng.gen()).collect();
            c.insert(format!("layer{t}"), Tensor::new(dtype, shape, data)?).map_err(|e| e.to_string())?;
        }
        let first = c.to_bytes();
        let back = Checkpoint::from_bytes(&first).map_err(|e| e.to_string())?;
        ensure!(back.to_bytes() == first, "case {case} is no fixpoint");
    }
    let sample = f32_checkpoint(vec![("alpha".into(), vec![1.0, 2.0]), ("beta".into(), vec![3.0; 3])]);
    let bytes = sample.to_bytes();
    match Checkpoint::from_bytes(&bytes[..bytes.len() - 1]) {
        Err(CheckpointError::Corrupt { tensor, .. }) if tensor == "beta" => {}
        other => return Err(format!("truncation not attributed to beta: {other:?}")),
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Format(_))), "bad magic accepted");
    Ok("100 write/read/write fixpoints, corruption attributed to its tensor".into())
}

fn schedule() -> Outcome {
    for (cfg, peak) in [(ScheduleConfig::profile_8b(), 3e-5), (ScheduleConfig::profile_70b(), 1.5e-5)] {
        ensure!(lr_at(cfg.warmup_steps, &cfg).ok() == Some(peak), "peak of {peak} profile");
        ensure!(lr_at(85_000, &cfg).ok() == Some(3e-6), "end of {peak} profile");
        let mut prev = peak;
        for step in cfg.warmup_steps..=cfg.total_steps {
            let lr = lr_at(step, &cfg).map_err(|e| e.to_string())?;
            ensure!(lr <= prev, "not monotone at {step}");
            prev = lr;
        }
    }
    let flat = ScheduleConfig {
        warmup_steps: 0,
        ..ScheduleConfig::profile_8b()
    };
    let mid = lr_at(42_500, &flat).map_err(|e| e.to_string())?;
    ensure!((mid - 1.65e-5).abs() < 1e-18, "midpoint {mid}");
    Ok(format!("peaks 3e-5 / 1.5e-5, end 3e-6, midpoint {mid:e}"))
}

fn token_budget() -> Outcome {
    let b = TokenBudget::from_steps(&MixtureConfig::default(), 85_000).map_err(|e| e.to_string())?;
    let one_t = 1_000_000_000_000u128;
    ensure!(b.total_tokens == 1_003_000_000_000, "total {}", b.total_tokens);
    ensure!(b.total_tokens.abs_diff(one_t) * 1000 < 5 * one_t, "outside 0.5% of 1T");
    for (n, d) in [(1, 10), (1, 4), (1, 2), (3, 4)] {
        let total = 30_000_000_000u128;
        let s = TokenBudget::from_total(total, Ratio::new(n, d), None).map_err(|e| e.to_string())?;
        ensure!(s.domain_tokens * d as u128 == total * n as u128, "30B split at {n}/{d}");
        ensure!(s.domain_tokens + s.general_tokens == total, "30B split does not sum");
    }
    Ok("11.8M x 85000 = 1.003e12; 30B splits exact".into())
}

fn mixture_bound() -> Outcome {
    for (n, d) in [(1u64, 10u64), (1, 4), (1, 2), (3, 4)] {
        let cfg = MixtureConfig {
            domain_ratio: Ratio::new(n, d),
            ..MixtureConfig::default()
        };
        let stream = mixture_stream(&cfg, 1_000_000).map_err(|e| e.to_string())?;
        let mut count = 0u64;
        for (k, s) in stream.iter().enumerate() {
            count += u64::from(*s == Stream::Domain);
            ensure!((count * d).abs_diff((k as u64 + 1) * n) < d, "r={n}/{d} prefix {}", k + 1);
        }
    }
    Ok("n=1e6, every prefix within 1 of k*r".into())
}

fn determinism() -> Outcome {
    let langs = [Language::En, Language::It];
    let catalog = common::synthetic_catalog(&langs, 25, 4);
    let instances: Vec<TaskInstance> = common::generate_all(&catalog, &TaskKind::ALL, &langs, 3, 50);
    ensure!(instances.len() == 500, "{} instances", instances.len());
    let backend = HashBackend::with_seed(12);
    let run = |concurrency| {
        let opts = EvalOptions {
            concurrency,
            ..Default::default()
        };
        run_eval(&instances, &backend, &FewShotPolicy::default(), &instances, &opts)
            .map(|r| serde_json::to_vec(&r).expect("report serializes"))
            .map_err(|e| e.to_string())
    };
    ensure!(run(1)? == run(16)?, "reports differ between concurrency 1 and 16");
    let (base, adapted) = merge_pair(3, 6, 300_000);
    for acc in [Precision::F32, Precision::F64] {
        let spec = MergeSpec::new(Ratio::new(3, 10)).with_accumulation(acc);
        let one = merge_with_threads(&base, &adapted, &spec, 1).map_err(|e| e.to_string())?;
        let eight = merge_with_threads(&base, &adapted, &spec, 8).map_err(|e| e.to_string())?;
        ensure!(one.to_bytes() == eight.to_bytes(), "{acc:?} merge differs across thread counts");
    }
    Ok("eval reports equal at 1/16 workers; merges equal at 1/8 threads".into())
}

fn long_texts(count: usize, words: usize) -> Vec<String> {
    (0..count)
        .map(|t| (0..words).map(|i| format!(" t{t}w{}", (i * 7919) % 1009)).collect())
        .collect()
}

fn perplexity_curves() -> Outcome {
    let lengths = [1024, 2048, 4096, 8192, 16384, 32768];
    let texts = long_texts(3, 32768);
    let uniform = ppl_vs_length(&texts, &UniformBackend::with_vocab(256), &lengths, DEFAULT_TREND_TOLERANCE)
        .map_err(|e| e.to_string())?;
    for row in &uniform.rows {
        let ppl = row.ppl.ok_or("empty bucket")?;
        ensure!((ppl - 256.0).abs() <= 1e-9, "uniform ppl {ppl} at {}", row.length);
    }
    let backend = HashBackend::new(BackendDescriptor {
        penalty: Some(PositionPenalty {
            after_tokens: 8192,
            nats_per_token: 0.5,
        }),
        ..BackendDescriptor::of_kind(BackendKind::MockHash)
    });
    let penalized = ppl_vs_length(&texts, &backend, &lengths, DEFAULT_TREND_TOLERANCE).map_err(|e| e.to_string())?;
    let trends: Vec<Option<Trend>> = penalized.rows.iter().map(|r| r.trend).collect();
    let flat = trends[1..4].iter().all(|t| *t == Some(Trend::Flat));
    let rising = trends[4..].iter().all(|t| *t == Some(Trend::Rising));
    ensure!(flat && rising && penalized.rise_onset == Some(8192), "penalty trends {trends:?}");
    Ok("uniform 256 in every bucket; penalty flat to 8k, rising after".into())
}

fn main() {
    let criteria: [(u32, fn() -> Outcome, Option<Duration>); 11] = [
        (1, golden_templates, Some(Duration::from_secs(1))),
        (2, price_factor_law, Some(Duration::from_secs(5))),
        (3, oracle_and_chance, Some(Duration::from_secs(120))),
        (4, few_shot_defaults, None),
        (5, merge_correctness, None),
        (6, round_trip, None),
        (7, schedule, None),
        (8, token_budget, None),
        (9, mixture_bound, Some(Duration::from_secs(10))),
        (10, determinism, None),
        (11, perplexity_curves, None),
    ];
    let mut failed = 0;
    for (n, check, budget) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({:.3}s) {detail}", elapsed.as_secs_f64()),
            Err(reason) => {
                failed += 1;
                println!("criterion {n}: FAIL ({:.3}s) {reason}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
