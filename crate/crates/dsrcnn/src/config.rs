//! Run configuration: model, optimizer, and metric settings as one TOML
//! document. Every run echoes its fully resolved configuration into the
//! output directory, and re-ingesting that echo reproduces the run.

use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::model::ModelConfig;
use crate::training::SgdConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sgd.validate()?;
        self.metrics.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Apply the shared `--seed` override to both the initialization and the
    /// training stream.
    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.sgd.seed = seed;
    }
}
