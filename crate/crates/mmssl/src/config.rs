use std::fs;
use std::path::{Path, PathBuf};

use mmssl_core::datagen::{AugmentConfig, GenConfig};
use mmssl_core::reconstruct::{ReconstructConfig, ReconstructionMode};
use mmssl_core::trainer::{TrainConfig, TrainSetup};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Toggle axes of an ablation grid. Empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub adaptive_threshold: Vec<bool>,
    pub contrastive: Vec<bool>,
    pub mode: Vec<ReconstructionMode>,
    /// Overrides the rate of every configured missingness spec.
    pub missing_rate: Vec<f64>,
    /// Training seeds; empty means the base `train.seed`.
    pub seeds: Vec<u64>,
    /// Concurrent runs (0: one per available core).
    pub workers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
    pub augment: AugmentConfig,
    pub out_dir: Option<PathBuf>,
    pub label: Option<String>,
    pub ablate: AblateConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup { train: self.train.clone(), reconstruct: self.reconstruct.clone(), augment: self.augment.clone() }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.gen.validate()?;
        self.setup().validate()?;
        if self.ablate.missing_rate.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(CliError::Usage("ablate.missing_rate entries must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
