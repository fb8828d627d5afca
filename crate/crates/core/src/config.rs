//! The single JSON configuration document shared by training, sampling and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumConfig;
use crate::denoiser::NetworkConfig;
use crate::diffusion::{build_schedule, NoiseSchedule, SamplerConfig, ScheduleKind};
use crate::objectives::{LossConfig, PhysicalParams};
use crate::optim::AdamConfig;
use crate::pipeline::{EvalProtocol, SyntheticSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub schedule: ScheduleKind,
    /// Sampler steps at inference.
    pub steps: usize,
    pub order: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { t: 1000, schedule: ScheduleKind::Cosine, steps: 25, order: 2 }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t, self.schedule)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { steps: self.steps, order: self.order }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.steps == 0 {
            return Err(Error::Config("diffusion.T and diffusion.steps must be at least 1".into()));
        }
        if !(1..=2).contains(&self.order) {
            return Err(Error::Config(format!("diffusion.order must be 1 or 2, got {}", self.order)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Defaults to one pass over the dataset, `ceil(count / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 32, iterations_per_epoch: None }
    }
}

/// Everything a run needs; serialises to the `--config` JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub diffusion: DiffusionConfig,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub phys: PhysicalParams,
    pub train: TrainSettings,
    pub curriculum: CurriculumConfig,
    pub data: SyntheticSpec,
    pub eval: EvalProtocol,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.network.validate()?;
        self.loss.weights.validate()?;
        self.phys.validate()?;
        self.train.adam.validate()?;
        self.curriculum.validate()?;
        self.data.validate()?;
        self.eval.validate()?;
        if self.train.batch_size == 0 || self.train.iterations_per_epoch == Some(0) {
            return Err(Error::Config("train.batch_size and train.iterations_per_epoch must be at least 1".into()));
        }
        let sk = &self.data.skeleton;
        if self.network.feature_dim != sk.feature_dim() || self.network.anchor_dim != sk.anchor_dim() {
            return Err(Error::Config(format!(
                "network widths ({}, {}) do not match the skeleton ({}, {})",
                self.network.feature_dim,
                self.network.anchor_dim,
                sk.feature_dim(),
                sk.anchor_dim()
            )));
        }
        if self.data.frames > self.network.max_frames {
            return Err(Error::Config(format!(
                "data.frames ({}) exceeds network.max_frames ({})",
                self.data.frames, self.network.max_frames
            )));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.train
            .iterations_per_epoch
            .unwrap_or_else(|| self.data.count.div_ceil(self.train.batch_size))
    }
}
