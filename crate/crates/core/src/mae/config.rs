//! Flat key/value run configuration in TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

use super::loss::LossWeights;
use super::model::MaeConfig;
use super::train::TrainConfig;

/// Every architecture, training and loss setting in one flat table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: MaeConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub loss: LossWeights,
}

/// Keys that may be absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &[
    "full_attn_layers",
    "dec_full_attn_layers",
    "steps",
    "plateau_patience",
];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }

    /// Parse and validate, rejecting unknown keys.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse()?;
        let known = toml::Table::try_from(Self::default())?;
        for key in table.keys() {
            if !known.contains_key(key) && !OPTIONAL_KEYS.contains(&key.as_str()) {
                return Err(config_err(format!("unknown config key `{key}`")));
            }
        }
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}
