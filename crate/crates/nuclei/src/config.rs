//! The single run configuration file.

use std::path::{Path, PathBuf};

use nuclei_core::fcn::{AugmentationConfig, TrainConfig, UNetSpec};
use nuclei_core::losses::LossConfig;
use nuclei_core::metrics::MatchCriterion;
use nuclei_core::pipeline::PipelineConfig;
use nuclei_core::stainsep::StainFitConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: UNetSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
    /// Retained area fraction when shrinking instance masks into labels.
    pub shrink_fraction: f64,
    pub pipeline: PipelineConfig,
    pub criterion: MatchCriterion,
    pub stain: StainFitConfig,
    pub paths: Paths,
}

/// Optional default locations, overridden by command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: UNetSpec::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentationConfig::default(),
            shrink_fraction: nuclei_core::groundtruth::DEFAULT_FRACTION,
            pipeline: PipelineConfig::default(),
            criterion: MatchCriterion::default(),
            stain: StainFitConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |e: nuclei_core::Error| Error::Usage(format!("config: {e}"));
        self.model.validate().map_err(usage)?;
        self.loss.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.augment.validate().map_err(usage)?;
        self.pipeline.grid.validate().map_err(usage)?;
        self.criterion.validate().map_err(usage)?;
        self.stain.validate().map_err(usage)?;
        if !(self.shrink_fraction > 0.0 && self.shrink_fraction <= 1.0) {
            return Err(Error::Usage("config: shrink_fraction must lie in (0, 1]".into()));
        }
        if self.pipeline.grid.patch_size % self.model.size_multiple() != 0 {
            return Err(Error::Usage(format!(
                "config: patch_size {} must be a multiple of {} for a depth-{} model",
                self.pipeline.grid.patch_size,
                self.model.size_multiple(),
                self.model.depth
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Writes the effective configuration as `config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join("config.json"), self)
    }
}
