//! Tensor container format and weighted checkpoint interpolation.
//!
//! Layout:
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 0..8         | magic `ECKPT\0\0` followed by format version `1`     |
//! | 8..16        | header length `H`, little-endian u64                 |
//! | 16..16+H     | compact UTF-8 JSON header, keys sorted at every level |
//! | 16+H..       | tensor data, contiguous, no padding                  |
//!
//! The header maps each tensor name to
//! `{"dtype": "f32"|"f16"|"bf16", "shape": [..], "offset": o, "len": n}` with
//! offsets relative to the data region, plus a `"__meta__"` entry holding
//! `{"producer", "alpha"?, "parents"?}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::to_hex;
use crate::ratio::Ratio;

pub const MAGIC_PREFIX: &[u8; 7] = b"ECKPT\0\0";
pub const FORMAT_VERSION: u8 = 1;
pub const META_KEY: &str = "__meta__";
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
    Bf16,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::Bf16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::Bf16 => "bf16",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint container: {0}")]
    Format(String),
    #[error("corrupt tensor {tensor:?}: {message}")]
    Corrupt { tensor: String, message: String },
    #[error("invalid tensor {tensor:?}: {message}")]
    InvalidTensor { tensor: String, message: String },
    #[error("checkpoints are incompatible:\n{0}")]
    Incompatible(CompatReport),
    #[error("invalid merge: {0}")]
    InvalidMerge(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<u64>,
    data: Vec<u8>,
}

fn element_count(shape: &[u64]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    /// `data` holds little-endian elements; its length must match the shape.
    pub fn new(dtype: DType, shape: Vec<u64>, data: Vec<u8>) -> Result<Self, String> {
        if shape.contains(&0) {
            return Err(format!("shape {shape:?} has a zero dimension"));
        }
        let expected = element_count(&shape)
            .and_then(|n| n.checked_mul(dtype.size() as u64))
            .ok_or_else(|| format!("shape {shape:?} overflows"))?;
        if expected != data.len() as u64 {
            return Err(format!(
                "{} data bytes but shape {shape:?} of {dtype} needs {expected}",
                data.len()
            ));
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<u64>, values: &[f32]) -> Result<Self, String> {
        Tensor::new(DType::F32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_f16(shape: Vec<u64>, values: &[f16]) -> Result<Self, String> {
        Tensor::new(DType::F16, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_bf16(shape: Vec<u64>, values: &[bf16]) -> Result<Self, String> {
        Tensor::new(DType::Bf16, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element values widened to f64 (exact for every element type).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| decode_f32(self.dtype, &self.data, i) as f64).collect()
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        (0..self.len()).map(|i| decode_f32(self.dtype, &self.data, i)).collect()
    }
}

/// Element `i` widened to f32 (exact for every element type).
fn decode_f32(dtype: DType, data: &[u8], i: usize) -> f32 {
    match dtype {
        DType::F32 => f32::from_le_bytes(data[4 * i..4 * i + 4].try_into().unwrap()),
        DType::F16 => f16::from_le_bytes([data[2 * i], data[2 * i + 1]]).to_f32(),
        DType::Bf16 => bf16::from_le_bytes([data[2 * i], data[2 * i + 1]]).to_f32(),
    }
}

fn encode_f32(dtype: DType, value: f32, out: &mut [u8]) {
    match dtype {
        DType::F32 => out.copy_from_slice(&value.to_le_bytes()),
        DType::F16 => out.copy_from_slice(&f16::from_f32(value).to_le_bytes()),
        DType::Bf16 => out.copy_from_slice(&bf16::from_f32(value).to_le_bytes()),
    }
}

/// f64 to f32 with round-to-odd. A subsequent round-to-nearest-even to any
/// format at least two bits narrower equals direct rounding from f64.
pub fn f64_to_f32_round_odd(x: f64) -> f32 {
    let r = x as f32;
    if !r.is_finite() || r as f64 == x {
        return r;
    }
    let toward_zero = if (r as f64).abs() > x.abs() {
        f32::from_bits(r.to_bits() - 1)
    } else {
        r
    };
    f32::from_bits(toward_zero.to_bits() | 1)
}

fn encode_f64(dtype: DType, value: f64, out: &mut [u8]) {
    match dtype {
        DType::F32 => out.copy_from_slice(&(value as f32).to_le_bytes()),
        _ => encode_f32(dtype, f64_to_f32_round_odd(value), out),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub producer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Checkpoint {
    pub meta: Meta,
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    dtype: DType,
    shape: Vec<u64>,
    offset: u64,
    len: u64,
}

impl Checkpoint {
    pub fn new(producer: impl Into<String>) -> Self {
        Checkpoint {
            meta: Meta {
                producer: producer.into(),
                ..Meta::default()
            },
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), CheckpointError> {
        let name = name.into();
        if name == META_KEY || name.is_empty() {
            return Err(CheckpointError::InvalidTensor {
                tensor: name,
                message: "reserved or empty name".into(),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Tensors in name order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn data_bytes(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Canonical container bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        header.insert(META_KEY.into(), serde_json::to_value(&self.meta).expect("meta serializes"));
        let mut offset = 0u64;
        for (name, tensor) in &self.tensors {
            let len = tensor.data.len() as u64;
            let entry = TensorEntry {
                dtype: tensor.dtype,
                shape: tensor.shape.clone(),
                offset,
                len,
            };
            header.insert(name.clone(), serde_json::to_value(entry).expect("entry serializes"));
            offset += len;
        }
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
        out.extend_from_slice(MAGIC_PREFIX);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for tensor in self.tensors.values() {
            out.extend_from_slice(&tensor.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < PREAMBLE {
            return Err(CheckpointError::Format(format!("file is {} bytes, shorter than the preamble", bytes.len())));
        }
        if &bytes[..7] != MAGIC_PREFIX {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        if bytes[7] != FORMAT_VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                bytes[7]
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let available = (bytes.len() - PREAMBLE) as u64;
        if header_len > available {
            return Err(CheckpointError::Format(format!(
                "header length {header_len} exceeds the {available} bytes after the preamble"
            )));
        }
        let header_end = PREAMBLE + header_len as usize;
        let header: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| CheckpointError::Format(format!("header is not a JSON object: {e}")))?;
        let data = &bytes[header_end..];

        let mut meta = Meta::default();
        let mut entries = Vec::new();
        for (name, value) in header {
            if name == META_KEY {
                meta = serde_json::from_value(value).map_err(|e| CheckpointError::Format(format!("bad {META_KEY}: {e}")))?;
                continue;
            }
            let entry: TensorEntry = serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt {
                tensor: name.clone(),
                message: format!("bad header entry: {e}"),
            })?;
            entries.push((name, entry));
        }
        entries.sort_by_key(|(_, e)| e.offset);

        let mut expected_offset = 0u64;
        let mut tensors = BTreeMap::new();
        for (name, entry) in entries {
            let corrupt = |message: String| CheckpointError::Corrupt {
                tensor: name.clone(),
                message,
            };
            if entry.offset != expected_offset {
                return Err(corrupt(format!(
                    "offset {} but the previous tensor ends at {expected_offset}",
                    entry.offset
                )));
            }
            let end = entry
                .offset
                .checked_add(entry.len)
                .ok_or_else(|| corrupt("offset + len overflows".into()))?;
            if end > data.len() as u64 {
                return Err(corrupt(format!(
                    "truncated: needs data bytes {}..{end} but the data region has {}",
                    entry.offset,
                    data.len()
                )));
            }
            let slice = data[entry.offset as usize..end as usize].to_vec();
            let tensor = Tensor::new(entry.dtype, entry.shape, slice).map_err(corrupt)?;
            tensors.insert(name, tensor);
            expected_offset = end;
        }
        if expected_offset != data.len() as u64 {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes after the last tensor",
                data.len() as u64 - expected_offset
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// SHA-256 over tensor names, types, shapes and data in name order.
    /// Metadata is excluded, so a copy with a different producer matches.
    pub fn content_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.tensors {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update([tensor.dtype as u8]);
            hasher.update((tensor.shape.len() as u64).to_le_bytes());
            for d in &tensor.shape {
                hasher.update(d.to_le_bytes());
            }
            hasher.update((tensor.data.len() as u64).to_le_bytes());
            hasher.update(&tensor.data);
        }
        to_hex(&hasher.finalize())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mismatch {
    MissingInBase { tensor: String },
    MissingInAdapted { tensor: String },
    Shape { tensor: String, base: Vec<u64>, adapted: Vec<u64> },
    DType { tensor: String, base: DType, adapted: DType },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::MissingInBase { tensor } => write!(f, "{tensor}: missing in base"),
            Mismatch::MissingInAdapted { tensor } => write!(f, "{tensor}: missing in adapted"),
            Mismatch::Shape { tensor, base, adapted } => {
                write!(f, "{tensor}: shape {base:?} in base vs {adapted:?} in adapted")
            }
            Mismatch::DType { tensor, base, adapted } => {
                write!(f, "{tensor}: dtype {base} in base vs {adapted} in adapted")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatReport {
    pub mismatches: Vec<Mismatch>,
}

impl CompatReport {
    pub fn is_compatible(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mismatches.is_empty() {
            return f.write_str("compatible");
        }
        for m in &self.mismatches {
            writeln!(f, "  {m}")?;
        }
        Ok(())
    }
}

pub fn check_compat(base: &Checkpoint, adapted: &Checkpoint) -> CompatReport {
    let mut mismatches = Vec::new();
    for (name, b) in &base.tensors {
        match adapted.tensors.get(name) {
            None => mismatches.push(Mismatch::MissingInAdapted { tensor: name.clone() }),
            Some(a) => {
                if a.shape != b.shape {
                    mismatches.push(Mismatch::Shape {
                        tensor: name.clone(),
                        base: b.shape.clone(),
                        adapted: a.shape.clone(),
                    });
                }
                if a.dtype != b.dtype {
                    mismatches.push(Mismatch::DType {
                        tensor: name.clone(),
                        base: b.dtype,
                        adapted: a.dtype,
                    });
                }
            }
        }
    }
    for name in adapted.tensors.keys() {
        if !base.tensors.contains_key(name) {
            mismatches.push(Mismatch::MissingInBase { tensor: name.clone() });
        }
    }
    CompatReport { mismatches }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown accumulation precision {s:?} (valid: f32, f64)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSpec {
    /// Weight of the adapted checkpoint.
    pub alpha: Ratio,
    #[serde(default)]
    pub accumulation: Precision,
}

impl MergeSpec {
    pub fn new(alpha: Ratio) -> Self {
        MergeSpec {
            alpha,
            accumulation: Precision::F32,
        }
    }

    pub fn with_accumulation(self, accumulation: Precision) -> Self {
        MergeSpec { accumulation, ..self }
    }

    /// `(w_base, w_adapted)` at f64. The base weight is the exact complement
    /// rounded once, which keeps `merge(a, b, α) == merge(b, a, 1-α)`.
    pub fn weights_f64(&self) -> Result<(f64, f64), CheckpointError> {
        let complement = self
            .alpha
            .complement()
            .ok_or_else(|| CheckpointError::InvalidMerge(format!("alpha {} is outside [0, 1]", self.alpha)))?;
        Ok((complement.to_f64(), self.alpha.to_f64()))
    }

    pub fn weights_f32(&self) -> Result<(f32, f32), CheckpointError> {
        let complement = self
            .alpha
            .complement()
            .ok_or_else(|| CheckpointError::InvalidMerge(format!("alpha {} is outside [0, 1]", self.alpha)))?;
        Ok((ratio_to_f32(complement), ratio_to_f32(self.alpha)))
    }
}

fn ratio_to_f32(r: Ratio) -> f32 {
    r.to_f64() as f32
}

fn blend(base: &Tensor, adapted: &Tensor, spec: &MergeSpec) -> Result<Tensor, CheckpointError> {
    if spec.alpha.is_zero() {
        return Ok(base.clone());
    }
    if spec.alpha.is_one() {
        return Ok(adapted.clone());
    }
    let dtype = base.dtype;
    let size = dtype.size();
    let mut out = vec![0u8; base.data.len()];
    const CHUNK: usize = 1 << 14;
    let chunk_bytes = CHUNK * size;
    match spec.accumulation {
        Precision::F32 => {
            let (wb, wa) = spec.weights_f32()?;
            out.par_chunks_mut(chunk_bytes)
                .zip(base.data.par_chunks(chunk_bytes))
                .zip(adapted.data.par_chunks(chunk_bytes))
                .for_each(|((o, b), a)| {
                    for i in 0..o.len() / size {
                        let v = wb * decode_f32(dtype, b, i) + wa * decode_f32(dtype, a, i);
                        encode_f32(dtype, v, &mut o[i * size..(i + 1) * size]);
                    }
                });
        }
        Precision::F64 => {
            let (wb, wa) = spec.weights_f64()?;
            out.par_chunks_mut(chunk_bytes)
                .zip(base.data.par_chunks(chunk_bytes))
                .zip(adapted.data.par_chunks(chunk_bytes))
                .for_each(|((o, b), a)| {
                    for i in 0..o.len() / size {
                        let v = wb * decode_f32(dtype, b, i) as f64 + wa * decode_f32(dtype, a, i) as f64;
                        encode_f64(dtype, v, &mut o[i * size..(i + 1) * size]);
                    }
                });
        }
    }
    Ok(Tensor {
        dtype,
        shape: base.shape.clone(),
        data: out,
    })
}

/// Accumulator values of a blend at f64, before rounding to the output type.
pub fn blend_values_f64(base: &Tensor, adapted: &Tensor, alpha: Ratio) -> Result<Vec<f64>, CheckpointError> {
    let (wb, wa) = MergeSpec::new(alpha).weights_f64()?;
    Ok(base
        .to_f64_vec()
        .into_iter()
        .zip(adapted.to_f64_vec())
        .map(|(b, a)| wb * b + wa * a)
        .collect())
}

pub const MERGE_PRODUCER: &str = "ecomadapt merge";

/// `(1 - α)·base + α·adapted` for every element, using the global thread pool.
pub fn merge(base: &Checkpoint, adapted: &Checkpoint, spec: &MergeSpec) -> Result<Checkpoint, CheckpointError> {
    let report = check_compat(base, adapted);
    if !report.is_compatible() {
        return Err(CheckpointError::Incompatible(report));
    }
    spec.weights_f64()?;
    let merged: Vec<(String, Tensor)> = base
        .tensors
        .par_iter()
        .map(|(name, b)| blend(b, &adapted.tensors[name], spec).map(|t| (name.clone(), t)))
        .collect::<Result<_, _>>()?;
    Ok(Checkpoint {
        meta: Meta {
            producer: format!("{MERGE_PRODUCER} ({} accumulation)", match spec.accumulation {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }),
            alpha: Some(spec.alpha.to_string()),
            parents: Some(vec![base.content_digest(), adapted.content_digest()]),
        },
        tensors: merged.into_iter().collect(),
    })
}

/// [`merge`] on a dedicated pool of `threads` workers.
pub fn merge_with_threads(
    base: &Checkpoint,
    adapted: &Checkpoint,
    spec: &MergeSpec,
    threads: usize,
) -> Result<Checkpoint, CheckpointError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CheckpointError::InvalidMerge(e.to_string()))?;
    pool.install(|| merge(base, adapted, spec))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: Ratio,
    /// File name relative to the manifest directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub base_digest: String,
    pub adapted_digest: String,
    pub accumulation: Precision,
    pub entries: Vec<SweepEntry>,
    pub complete: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sweep_file_name(alpha: Ratio) -> String {
    format!("merged-alpha-{}.eckpt", alpha.to_string().replace('/', "_"))
}

/// Validates a sweep grid: within `[0, 1]`, strictly increasing.
pub fn validate_alphas(alphas: &[Ratio]) -> Result<(), CheckpointError> {
    if alphas.is_empty() {
        return Err(CheckpointError::InvalidMerge("no alphas given".into()));
    }
    if let Some(a) = alphas.iter().find(|a| **a > Ratio::ONE) {
        return Err(CheckpointError::InvalidMerge(format!("alpha {a} is outside [0, 1]")));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CheckpointError::InvalidMerge("alphas must be sorted and distinct".into()));
    }
    Ok(())
}

/// Writes one merged checkpoint per α plus `manifest.json` into `out_dir`.
/// A failed write is recorded in the manifest and the sweep continues.
pub fn merge_sweep(
    base: &Checkpoint,
    adapted: &Checkpoint,
    alphas: &[Ratio],
    accumulation: Precision,
    out_dir: impl AsRef<Path>,
) -> Result<SweepManifest, CheckpointError> {
    validate_alphas(alphas)?;
    let report = check_compat(base, adapted);
    if !report.is_compatible() {
        return Err(CheckpointError::Incompatible(report));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let mut entries = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let spec = MergeSpec { alpha, accumulation };
        let file = sweep_file_name(alpha);
        let result = merge(base, adapted, &spec).and_then(|m| {
            write_checkpoint(out_dir.join(&file), &m)?;
            Ok(m.content_digest())
        });
        entries.push(match result {
            Ok(digest) => SweepEntry {
                alpha,
                path: file,
                digest: Some(digest),
                status: EntryStatus::Ok,
                error: None,
            },
            Err(e) => SweepEntry {
                alpha,
                path: file,
                digest: None,
                status: EntryStatus::Failed,
                error: Some(e.to_string()),
            },
        });
    }
    let manifest = SweepManifest {
        base_digest: base.content_digest(),
        adapted_digest: adapted.content_digest(),
        accumulation,
        complete: entries.iter().all(|e| e.status == EntryStatus::Ok),
        entries,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(|e| io_error(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SweepManifest, CheckpointError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CheckpointError::Format(format!("{}: {e}", path.display())))
}
