use std::path::{Path, PathBuf};

use s2a_core::corpus::CorpusSpec;
use s2a_core::evalbench::BenchConfig;
use s2a_core::model::ModelConfig;
use s2a_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides the seed from the config file.
pub const SEED_ENV: &str = "S2A_SEED";

/// Size preset applied before the config file's own model section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size model.
    Default,
    /// Desk-scale model for quick runs.
    Tiny,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

/// File-level configuration: model, training, corpus and benchmark settings
/// plus default paths. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub preset: Preset,
    pub model: serde_json::Value,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub bench: BenchConfig,
    pub paths: Paths,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            preset: Preset::Default,
            model: serde_json::Value::Object(Default::default()),
            train: TrainConfig::default(),
            corpus: CorpusSpec::default(),
            bench: BenchConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Model configuration: preset defaults overlaid with the file's `model`
    /// object field by field.
    pub fn model_config(&self, preset: Option<Preset>) -> Result<ModelConfig, CliError> {
        let base = match preset.unwrap_or(self.preset) {
            Preset::Default => ModelConfig::default(),
            Preset::Tiny => ModelConfig::tiny(),
        };
        let mut merged = serde_json::to_value(base).expect("config serializes");
        let overlay = self
            .model
            .as_object()
            .ok_or_else(|| CliError::usage("config 'model' must be an object".into()))?;
        for (k, v) in overlay {
            if merged.get(k).is_none() {
                return Err(CliError::usage(format!("unknown model config field '{k}'")));
            }
            merged[k] = v.clone();
        }
        serde_json::from_value(merged).map_err(|e| CliError::usage(format!("invalid model config: {e}")))
    }
}

/// Seed precedence: command-line flag, then `S2A_SEED`, then the file.
pub fn resolve_seed(flag: Option<u64>, file: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(file),
    }
}

/// Prints the resolved configuration to stderr.
pub fn print_effective<T: Serialize>(command: &str, value: &T) {
    let json = serde_json::to_string_pretty(value).expect("config serializes");
    eprintln!("effective {command} config:\n{json}");
}
