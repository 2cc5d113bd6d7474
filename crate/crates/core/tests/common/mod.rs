#![allow(dead_code)]

pub mod stub;

use std::path::PathBuf;

use ecomadapt::catalog::{compute_aspect_stats, Aspect, Catalog, CategoryPath, Language, Listing, Price};
use ecomadapt::ratio::MinorUnits;
use ecomadapt::taskgen::{generate, GeneratorConfig, TaskInstance, TaskKind};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Value counts per key within a synthetic category.
pub const SYNTH_COUNTS: [usize; 4] = [6, 4, 3, 2];
pub const SYNTH_PER_CATEGORY: usize = 15;

/// `categories` categories per language, each with `SYNTH_PER_CATEGORY`
/// listings carrying `keys` aspects. Every key has four single-word values
/// with counts `SYNTH_COUNTS`; categories, values and titles are
/// language-local and prices are whole amounts in USD.
pub fn synthetic_catalog(languages: &[Language], categories: usize, keys: usize) -> Catalog {
    let mut listings = Vec::new();
    for &lang in languages {
        for c in 0..categories {
            for i in 0..SYNTH_PER_CATEGORY {
                let aspects = (0..keys)
                    .map(|k| {
                        // Rotate which listings share a value from key to key.
                        let slot = (i + 4 * k) % SYNTH_PER_CATEGORY;
                        let mut bucket = 0;
                        let mut acc = SYNTH_COUNTS[0];
                        while slot >= acc {
                            bucket += 1;
                            acc += SYNTH_COUNTS[bucket];
                        }
                        Aspect {
                            key: format!("Key{k}"),
                            value: format!("{}val{c}x{k}x{bucket}", lang.code()),
                        }
                    })
                    .collect();
                let n = c * SYNTH_PER_CATEGORY + i;
                listings.push(Listing {
                    id: format!("{}-{c}-{i}", lang.code()),
                    title: format!("{} item {c} {i}", lang.code()),
                    category: CategoryPath(vec!["Synthetic".into(), format!("{} Category {c}", lang.code())]),
                    price: Some(Price {
                        amount: MinorUnits(100 * (10 + (n * 37) % 990) as u64),
                        currency: "USD".into(),
                    }),
                    aspects,
                    language: lang,
                });
            }
        }
    }
    Catalog::from_listings(listings)
}

/// Instances of every `kind` for every language in `languages`.
pub fn generate_all(
    catalog: &Catalog,
    kinds: &[TaskKind],
    languages: &[Language],
    seed: u64,
    count: usize,
) -> Vec<TaskInstance> {
    let stats = compute_aspect_stats(catalog);
    let config = GeneratorConfig::with_seed(seed);
    let mut out = Vec::new();
    for &kind in kinds {
        for &lang in languages {
            out.extend(generate(kind, catalog, &stats, &config, lang, count).unwrap().instances);
        }
    }
    out
}
