//! JSON config file and the resolved settings echoed into artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use ecomadapt::catalog::Language;
use ecomadapt::lm::BackendDescriptor;
use ecomadapt::taskgen::{GeneratorConfig, TaskKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a `--config` file may set. Command-line flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub backend: Option<BackendDescriptor>,
    pub generator: Option<GeneratorConfig>,
    pub shots: Option<BTreeMap<TaskKind, usize>>,
    pub languages: Option<Vec<Language>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Resolved settings of one run. Worker counts are left out so artifacts do
/// not depend on them.
#[derive(Debug, Clone, Serialize)]
pub struct RunEcho<T: Serialize> {
    pub command: &'static str,
    pub settings: T,
}

/// Artifact body with the run settings alongside.
#[derive(Debug, Serialize)]
pub struct Artifact<'a, C: Serialize, B: Serialize> {
    pub config: &'a RunEcho<C>,
    #[serde(flatten)]
    pub body: B,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
