//! Declarative run configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rtprobe_core::corpus::{ColumnSchema, TokenizerMarkerRules};
use rtprobe_core::mixedmodel::LmmOptions;
use rtprobe_core::pipeline::PipelineConfig;

use crate::failure::Failure;

/// A schema preset name or a full column mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSpec {
    Preset(String),
    Columns(ColumnSchema),
}

impl Default for SchemaSpec {
    fn default() -> Self {
        SchemaSpec::Preset("native".into())
    }
}

impl SchemaSpec {
    pub fn resolve(&self) -> Result<ColumnSchema, Failure> {
        match self {
            SchemaSpec::Preset(name) => ColumnSchema::preset(name).map_err(Failure::from),
            SchemaSpec::Columns(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    #[default]
    Sentencepiece,
    ByteLevel,
    Plain,
}

impl Tokenizer {
    pub fn rules(self) -> TokenizerMarkerRules {
        match self {
            Tokenizer::Sentencepiece => TokenizerMarkerRules::sentencepiece(),
            Tokenizer::ByteLevel => TokenizerMarkerRules::byte_level(),
            Tokenizer::Plain => TokenizerMarkerRules::plain(),
        }
    }
}

/// Everything a `run`, `lmm` or `validate` invocation reads. Relative paths
/// are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub schema: SchemaSpec,
    pub trace: PathBuf,
    pub freq: PathBuf,
    #[serde(default)]
    pub tokenizer: Tokenizer,
    pub output: PathBuf,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub lmm: LmmOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation("config", format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::validation("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.trace, &mut cfg.freq, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::internal("config", e.to_string()))
    }

    /// Inputs that must exist before anything is read.
    pub fn missing_paths(&self) -> Vec<String> {
        [("corpus", &self.corpus), ("trace", &self.trace), ("freq", &self.freq)]
            .into_iter()
            .filter(|(_, p)| !p.exists())
            .map(|(what, p)| format!("{what} path {} does not exist", p.display()))
            .collect()
    }
}
