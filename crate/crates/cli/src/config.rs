use std::fs;
use std::path::{Path, PathBuf};

use fatfrac::eval::TruthSource;
use fatfrac::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FATFRAC_OUT";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub methods: Vec<String>,
    pub truth: TruthSource,
    /// `train`, `val`, `test` or `all`.
    pub split: String,
    pub png: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            methods: vec!["dixon".into(), "baseline_r2s".into(), "nlls".into()],
            truth: TruthSource::Phantom,
            split: "test".into(),
            png: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSettings {
    pub allow_unfiltered: bool,
    pub no_filter: bool,
}

/// What was run; informational, ignored when the file is fed back with `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub manifest: Option<String>,
    pub method: Option<String>,
    pub predictions: Option<String>,
}

/// Everything a run depends on, serializable to a single TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: Option<RunRecord>,
    pub pipeline: PipelineConfig,
    pub eval: EvalSettings,
    pub export: ExportSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(RUN_CONFIG_FILE);
        fs::create_dir_all(dir).map_err(|e| fatfrac::Error::Io { path: dir.into(), source: e })?;
        fs::write(&path, self.to_toml()?).map_err(|e| fatfrac::Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}

/// `--out`, else `$FATFRAC_OUT/<default_name>`.
pub fn resolve_out(flag: Option<PathBuf>, default_name: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => Ok(PathBuf::from(root).join(default_name)),
        _ => Err(CliError::Usage(format!("no output directory: pass --out or set {OUT_ENV}"))),
    }
}
