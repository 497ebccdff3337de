//! Output directory plumbing: the effective-config record and JSON/text writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sa_core::pipeline::PipelineConfig;
use sa_core::CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::settings::Settings;

pub const CONFIG_FILE: &str = "config.json";

/// Provenance record written beside every output set and embedded in reports.
/// The output directory itself is left out so re-runs into different
/// directories stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub config_file: Option<String>,
    pub threads: usize,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn new(command: &str, inputs: &[(&str, &Path)], config_file: Option<&Path>, settings: &Settings) -> Self {
        Self {
            command: command.to_string(),
            inputs: inputs
                .iter()
                .map(|(k, p)| (k.to_string(), p.display().to_string()))
                .collect(),
            config_file: config_file.map(|p| p.display().to_string()),
            threads: settings.threads,
            pipeline: settings.pipeline.clone(),
        }
    }

    /// Reads the record a previous run left in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CoreError::Io {
            path: path.clone(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Input(CoreError::Parse {
                path,
                line: e.line(),
                msg: e.to_string(),
            })
        })
    }
}

pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CoreError::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::Input(CoreError::Io { path, source: e }))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }
}
