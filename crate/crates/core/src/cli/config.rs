use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::args::SolverArg;
use crate::error::{Error, Result};

/// An SNR entry in a config file: a number of dB or the string "none".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SnrEntry {
    Db(f64),
    Text(String),
}

impl SnrEntry {
    pub fn as_text(&self) -> String {
        match self {
            SnrEntry::Db(v) => v.to_string(),
            SnrEntry::Text(s) => s.clone(),
        }
    }
}

/// Flat TOML defaults. Keys mirror the long flag names with `-` written as
/// `_`; `model_selection = false` matches `--no-model-selection`. Relative
/// paths are taken relative to the working directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub preset: Option<String>,
    pub measurements: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub restored: Option<PathBuf>,
    pub method: Option<String>,
    pub patch: Option<usize>,
    pub stride: Option<usize>,
    pub target: Option<usize>,
    pub cd_steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub persistent: Option<bool>,
    pub model_selection: Option<bool>,
    pub solver: Option<SolverArg>,
    pub count: Option<usize>,
    pub size: Option<String>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub last_sample: Option<bool>,
    pub random_init: Option<bool>,
    pub mr: Option<Vec<f64>>,
    pub snr_db: Option<Vec<SnrEntry>>,
    pub bins: Option<usize>,
    pub max_patches: Option<usize>,
    pub samples: Option<usize>,
    pub range: Option<f64>,
    pub lambda_fraction: Option<f64>,
    pub oracle_lambda: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
