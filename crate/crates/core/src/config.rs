//! TOML run configuration. Every section is optional and falls back to its
//! defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::TrainConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::eval::{DecoderConfig, SweepConfig};
use crate::gradcheck::GradcheckConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub n: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n: 10,
            seed: 0,
            resolution: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub decoder: DecoderConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Fraction of lowest-scoring samples to drop.
    pub quantile: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { quantile: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub render: RenderConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    pub eval: EvalConfig,
    pub filter: FilterConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
