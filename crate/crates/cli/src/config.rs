use std::path::Path;

use serde::Deserialize;
use xmodal_core::training::TrainingConfig;
use xmodal_core::{Error, Result};

/// Defaults shared by several subcommands. Command-line flags win over
/// anything set here.
///
/// ```json
/// {"seed": 3, "train": {"epochs": 5}, "eval": {"pool": 50, "direction": "a2v"}}
/// ```
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub train: TrainingConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pool: Option<usize>,
    pub max_pool: Option<usize>,
    pub repeats: Option<usize>,
    pub direction: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
