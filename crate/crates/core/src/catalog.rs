//! Listing catalogs: line-delimited JSON ingestion, validation, and the
//! per-(language, category, aspect key) value frequencies that the
//! most-common-aspect tasks use as ground truth.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::ratio::MinorUnits;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate listing id {id:?} on line {line} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    De,
    Es,
    Fr,
    It,
}

impl Language {
    pub const ALL: [Language; 5] = [
        Language::En,
        Language::De,
        Language::Es,
        Language::Fr,
        Language::It,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
            Language::Es => "es",
            Language::Fr => "fr",
            Language::It => "it",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown language {s:?} (expected one of en, de, es, fr, it)"))
    }
}

/// Ordered category segments, rendered joined with `:`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryPath(pub Vec<String>);

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(":"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    pub amount: MinorUnits,
    pub currency: String,
}

impl Price {
    /// Symbol used when rendering amounts. Unknown codes render as `"XYZ "`.
    pub fn symbol(&self) -> String {
        currency_symbol(&self.currency)
    }
}

pub fn currency_symbol(code: &str) -> String {
    match code {
        "USD" => "$".to_string(),
        "EUR" => "€".to_string(),
        "GBP" => "£".to_string(),
        other => format!("{other} "),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aspect {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listing {
    pub id: String,
    pub title: String,
    pub category: CategoryPath,
    pub price: Option<Price>,
    pub aspects: Vec<Aspect>,
    pub language: Language,
}

impl Listing {
    pub fn aspect(&self, key: &str) -> Option<&str> {
        self.aspects
            .iter()
            .find(|a| a.key == key)
            .map(|a| a.value.as_str())
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub line: usize,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}: field {field:?}: {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub source: Option<PathBuf>,
    /// SHA-256 of the raw input bytes.
    pub source_digest: String,
    pub listings: Vec<Listing>,
    pub diagnostics: Vec<LineDiagnostic>,
}

impl Catalog {
    pub fn from_listings(listings: Vec<Listing>) -> Self {
        Catalog {
            source: None,
            source_digest: String::new(),
            listings,
            diagnostics: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.listings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.listings.len()
    }

    pub fn by_language(&self, language: Language) -> impl Iterator<Item = &Listing> {
        self.listings.iter().filter(move |l| l.language == language)
    }

    /// Copy restricted to one language.
    pub fn filter_language(&self, language: Language) -> Catalog {
        Catalog {
            source: self.source.clone(),
            source_digest: self.source_digest.clone(),
            listings: self.by_language(language).cloned().collect(),
            diagnostics: Vec::new(),
        }
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut catalog = parse_catalog(&bytes)?;
    catalog.source = Some(path.to_path_buf());
    Ok(catalog)
}

/// Parses catalog bytes. Blank lines are ignored; invalid lines become
/// diagnostics; a duplicate id is fatal.
pub fn parse_catalog(bytes: &[u8]) -> Result<Catalog, CatalogError> {
    let mut listings = Vec::new();
    let mut diagnostics = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t,
            Err(e) => {
                diagnostics.push(LineDiagnostic {
                    line,
                    field: None,
                    message: format!("invalid UTF-8: {e}"),
                });
                continue;
            }
        };
        match parse_listing(text) {
            Ok(listing) => {
                if let Some(&first_line) = first_seen.get(&listing.id) {
                    return Err(CatalogError::DuplicateId {
                        id: listing.id,
                        line,
                        first_line,
                    });
                }
                first_seen.insert(listing.id.clone(), line);
                listings.push(listing);
            }
            Err((field, message)) => diagnostics.push(LineDiagnostic {
                line,
                field,
                message,
            }),
        }
    }

    Ok(Catalog {
        source: None,
        source_digest: sha256_hex(bytes),
        listings,
        diagnostics,
    })
}

type FieldError = (Option<String>, String);

fn field_err(field: &str, message: impl Into<String>) -> FieldError {
    (Some(field.to_string()), message.into())
}

fn non_empty_str<'a>(obj: &'a serde_json::Map<String, Value>, field: &str) -> Result<&'a str, FieldError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(field_err(field, "missing")),
        Some(Value::String(s)) if s.trim().is_empty() => Err(field_err(field, "must be non-empty")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(field_err(field, "must be a string")),
    }
}

fn parse_listing(text: &str) -> Result<Listing, FieldError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| (None, format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| (None, "expected a JSON object".to_string()))?;

    let id = non_empty_str(obj, "id")?.to_string();
    let title = non_empty_str(obj, "title")?.to_string();

    let category = match obj.get("category") {
        None | Some(Value::Null) => return Err(field_err("category", "missing")),
        Some(Value::Array(items)) => {
            if items.is_empty() {
                return Err(field_err("category", "needs at least one segment"));
            }
            items
                .iter()
                .map(|seg| match seg {
                    Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
                    _ => Err(field_err("category", "segments must be non-empty strings")),
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        Some(_) => return Err(field_err("category", "must be an array of strings")),
    };

    let price = match obj.get("price") {
        None | Some(Value::Null) => None,
        Some(Value::Object(p)) => {
            let amount_text = match p.get("amount") {
                Some(Value::String(s)) => s,
                Some(_) => return Err(field_err("price.amount", "must be a decimal string")),
                None => return Err(field_err("price.amount", "missing")),
            };
            let amount = MinorUnits::parse_amount(amount_text).ok_or_else(|| {
                field_err(
                    "price.amount",
                    format!("{amount_text:?} is not a decimal with exactly 2 fractional digits"),
                )
            })?;
            if amount.0 == 0 {
                return Err(field_err("price.amount", "must be strictly positive"));
            }
            let currency = match p.get("currency") {
                Some(Value::String(s))
                    if s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase()) =>
                {
                    s.clone()
                }
                Some(_) => {
                    return Err(field_err(
                        "price.currency",
                        "must be a 3-letter uppercase code",
                    ))
                }
                None => return Err(field_err("price.currency", "missing")),
            };
            Some(Price { amount, currency })
        }
        Some(_) => return Err(field_err("price", "must be an object")),
    };

    let aspects = match obj.get("aspects") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let pair = item
                    .as_object()
                    .ok_or_else(|| field_err("aspects", "entries must be {key, value} objects"))?;
                let key = non_empty_str(pair, "key").map_err(|_| {
                    field_err("aspects", "entry key must be a non-empty string")
                })?;
                let value = non_empty_str(pair, "value").map_err(|_| {
                    field_err("aspects", format!("value for key {key:?} must be a non-empty string"))
                })?;
                if !seen.insert(key.to_string()) {
                    return Err(field_err("aspects", format!("duplicate key {key:?}")));
                }
                out.push(Aspect {
                    key: key.to_string(),
                    value: value.to_string(),
                });
            }
            out
        }
        Some(_) => return Err(field_err("aspects", "must be an array")),
    };

    let language = non_empty_str(obj, "language")?
        .parse::<Language>()
        .map_err(|e| field_err("language", e))?;

    Ok(Listing {
        id,
        title,
        category: CategoryPath(category),
        price,
        aspects,
        language,
    })
}

/// Key of one frequency table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatsKey {
    pub language: Language,
    pub category: CategoryPath,
    pub key: String,
}

/// Value frequencies, each list sorted by count descending then value
/// ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AspectStats {
    entries: BTreeMap<StatsKey, Vec<(String, u64)>>,
}

#[derive(Serialize, Deserialize)]
struct StatsEntryRecord {
    language: Language,
    category: CategoryPath,
    key: String,
    values: Vec<(String, u64)>,
}

impl Serialize for AspectStats {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.entries.iter().map(|(k, v)| StatsEntryRecord {
            language: k.language,
            category: k.category.clone(),
            key: k.key.clone(),
            values: v.clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for AspectStats {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<StatsEntryRecord>::deserialize(deserializer)?;
        let mut entries = BTreeMap::new();
        for mut r in records {
            sort_counts(&mut r.values);
            entries.insert(
                StatsKey {
                    language: r.language,
                    category: r.category,
                    key: r.key,
                },
                r.values,
            );
        }
        Ok(AspectStats { entries })
    }
}

fn sort_counts(values: &mut [(String, u64)]) {
    values.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl AspectStats {
    pub fn get(&self, language: Language, category: &CategoryPath, key: &str) -> Option<&[(String, u64)]> {
        // BTreeMap lookups need an owned key.
        self.entries
            .get(&StatsKey {
                language,
                category: category.clone(),
                key: key.to_string(),
            })
            .map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&StatsKey, &[(String, u64)])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries for one language, in key order.
    pub fn for_language(&self, language: Language) -> impl Iterator<Item = (&StatsKey, &[(String, u64)])> {
        self.entries()
            .filter(move |(k, _)| k.language == language)
    }

    pub fn language_slice(&self, language: Language) -> AspectStats {
        AspectStats {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.language == language)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Rank (0 = most common) of `value` within its entry.
    pub fn rank_of(&self, language: Language, category: &CategoryPath, key: &str, value: &str) -> Option<usize> {
        self.get(language, category, key)?
            .iter()
            .position(|(v, _)| v == value)
    }
}

pub fn compute_aspect_stats(catalog: &Catalog) -> AspectStats {
    let mut counts: BTreeMap<StatsKey, BTreeMap<&str, u64>> = BTreeMap::new();
    for listing in &catalog.listings {
        for aspect in &listing.aspects {
            let key = StatsKey {
                language: listing.language,
                category: listing.category.clone(),
                key: aspect.key.clone(),
            };
            *counts.entry(key).or_default().entry(&aspect.value).or_insert(0) += 1;
        }
    }
    let entries = counts
        .into_iter()
        .map(|(k, values)| {
            let mut values: Vec<(String, u64)> =
                values.into_iter().map(|(v, c)| (v.to_string(), c)).collect();
            sort_counts(&mut values);
            (k, values)
        })
        .collect();
    AspectStats { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, lang: &str, cat: &[&str], aspects: &[(&str, &str)]) -> String {
        serde_json::json!({
            "id": id,
            "title": format!("Item {id}"),
            "category": cat,
            "aspects": aspects.iter().map(|(k, v)| serde_json::json!({"key": k, "value": v})).collect::<Vec<_>>(),
            "language": lang,
        })
        .to_string()
    }

    #[test]
    fn loads_three_valid_lines() {
        let text = [
            line("a", "en", &["X"], &[]),
            line("b", "de", &["X", "Y"], &[("Brand", "Nike")]),
            line("c", "en", &["X"], &[]),
        ]
        .join("\n");
        let catalog = parse_catalog(text.as_bytes()).unwrap();
        assert_eq!(catalog.len(), 3);
        assert!(catalog.diagnostics.is_empty());
        assert_eq!(catalog.listings[1].category.to_string(), "X:Y");
        assert_eq!(catalog.listings[1].aspect("Brand"), Some("Nike"));
    }

    #[test]
    fn missing_title_is_a_line_diagnostic() {
        let text = format!(
            "{}\n{}",
            line("a", "en", &["X"], &[]),
            r#"{"id":"b","category":["X"],"language":"en"}"#
        );
        let catalog = parse_catalog(text.as_bytes()).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(
            catalog.diagnostics,
            vec![LineDiagnostic {
                line: 2,
                field: Some("title".into()),
                message: "missing".into()
            }]
        );
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let text = format!(
            "{}\n{}",
            line("x1", "en", &["X"], &[]),
            line("x1", "en", &["Y"], &[])
        );
        match parse_catalog(text.as_bytes()) {
            Err(CatalogError::DuplicateId { id, line, first_line }) => {
                assert_eq!((id.as_str(), line, first_line), ("x1", 2, 1));
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_prices_and_duplicate_keys() {
        let cases = [
            (r#"{"id":"a","title":"t","category":["X"],"language":"en","price":{"amount":"1.5","currency":"USD"}}"#, "price.amount"),
            (r#"{"id":"a","title":"t","category":["X"],"language":"en","price":{"amount":"0.00","currency":"USD"}}"#, "price.amount"),
            (r#"{"id":"a","title":"t","category":["X"],"language":"en","price":{"amount":"1.50","currency":"usd"}}"#, "price.currency"),
            (r#"{"id":"a","title":"t","category":["X"],"language":"en","aspects":[{"key":"k","value":"1"},{"key":"k","value":"2"}]}"#, "aspects"),
            (r#"{"id":"a","title":"t","category":[],"language":"en"}"#, "category"),
            (r#"{"id":"a","title":"t","category":["X"],"language":"pt"}"#, "language"),
        ];
        for (text, field) in cases {
            let catalog = parse_catalog(text.as_bytes()).unwrap();
            assert_eq!(catalog.len(), 0, "{text}");
            assert_eq!(catalog.diagnostics[0].field.as_deref(), Some(field), "{text}");
        }
        let catalog = parse_catalog(b"{not json").unwrap();
        assert_eq!(catalog.diagnostics[0].field, None);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(
            load_catalog("/nonexistent/catalog.jsonl"),
            Err(CatalogError::Io { .. })
        ));
    }

    #[test]
    fn counts_sorted_with_lexicographic_ties() {
        let text = [
            line("1", "en", &["Digital Cameras"], &[("Brand", "Canon")]),
            line("2", "en", &["Digital Cameras"], &[("Brand", "Nikon")]),
            line("3", "en", &["Digital Cameras"], &[("Brand", "Canon")]),
            line("4", "en", &["Lenses"], &[("Mount", "B")]),
            line("5", "en", &["Lenses"], &[("Mount", "A")]),
        ]
        .join("\n");
        let stats = compute_aspect_stats(&parse_catalog(text.as_bytes()).unwrap());
        let cams = CategoryPath(vec!["Digital Cameras".into()]);
        assert_eq!(
            stats.get(Language::En, &cams, "Brand").unwrap(),
            &[("Canon".to_string(), 2), ("Nikon".to_string(), 1)]
        );
        let lens = CategoryPath(vec!["Lenses".into()]);
        assert_eq!(
            stats.get(Language::En, &lens, "Mount").unwrap(),
            &[("A".to_string(), 1), ("B".to_string(), 1)]
        );
        assert!(stats.get(Language::De, &cams, "Brand").is_none());
        assert_eq!(stats.rank_of(Language::En, &cams, "Brand", "Nikon"), Some(1));
    }

    #[test]
    fn stats_json_roundtrip() {
        let text = line("1", "fr", &["A"], &[("k", "v")]);
        let stats = compute_aspect_stats(&parse_catalog(text.as_bytes()).unwrap());
        let json = serde_json::to_string(&stats).unwrap();
        let back: AspectStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stats);
    }
}
