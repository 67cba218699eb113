//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clifford::{listed_clifford, GroupTable};
use crate::error::{Error, Result};
use crate::spsa::{InferenceConfig, ReuseConfig, SpsaConfig};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "BACRONYM_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub theta0: f64,
    pub depolarizing_strength: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self { theta0: 0.35, depolarizing_strength: 0.005 }
    }
}

/// Which words compile the twirling group into generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Presentation {
    /// Fewest target gates per element.
    #[default]
    Minimal,
    /// The fixed 24-word listing.
    Listed,
}

impl Presentation {
    pub fn table(self) -> Result<GroupTable> {
        match self {
            Presentation::Minimal => Ok(GroupTable::clifford()),
            Presentation::Listed => listed_clifford(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub spsa: SpsaConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub reuse: ReuseConfig,
    #[serde(default)]
    pub presentation: Presentation,
    pub rng_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            device: DeviceConfig::default(),
            spsa: SpsaConfig::default(),
            inference: InferenceConfig::default(),
            reuse: ReuseConfig::default(),
            presentation: Presentation::default(),
            rng_seed: 0,
            output_dir: default_output_dir(),
        }
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config { field: format!("{section}.{field}"), message },
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, validates and applies the output-directory override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_json(&text)?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                config.output_dir = PathBuf::from(dir);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.device.theta0.is_finite() {
            return Err(Error::Config { field: "device.theta0".into(), message: "must be finite".into() });
        }
        let q = self.device.depolarizing_strength;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config {
                field: "device.depolarizing_strength".into(),
                message: format!("must be in [0, 1], got {q}"),
            });
        }
        self.spsa.validate().map_err(|e| prefixed("spsa", e))?;
        self.inference.validate().map_err(|e| prefixed("inference", e))?;
        self.reuse.validate().map_err(|e| prefixed("reuse", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
