use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use menunet::baselines::DEFAULT_DRAWS;
use menunet::market::GenerationConfig;
use menunet::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything one experiment needs. Loss weights live under
/// `[training.weights]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Draws per instance for the randomized baselines.
    pub draws: usize,
    pub generation: GenerationConfig,
    pub training: TrainConfig,
    pub audit: AuditConfig,
    pub scaling: ScalingSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub instances: usize,
    pub students: usize,
    pub misreports: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            draws: DEFAULT_DRAWS,
            generation: GenerationConfig::default(),
            training: TrainConfig::default(),
            audit: AuditConfig::default(),
            scaling: ScalingSection::default(),
        }
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            instances: 10,
            students: 20,
            misreports: 50,
        }
    }
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            sizes: vec![200, 400],
            instances: 16,
            epochs: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.training.validate()?;
        anyhow::ensure!(self.draws > 0, "draws must be positive");
        anyhow::ensure!(
            self.audit.students > 0 && self.audit.misreports > 0,
            "audit needs students and misreports"
        );
        Ok(())
    }

    /// Writes the resolved configuration next to the command's outputs.
    pub fn echo(&self, dir: &Path, command: &str) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{command}.config.toml"));
        std::fs::write(&path, toml::to_string(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
