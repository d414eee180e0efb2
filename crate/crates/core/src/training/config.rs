use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SampleParams;
use crate::synthvoice::{FlipNoise, JudgeConfig, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Linear warmup steps, then linear decay to zero over the run.
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            lr: 3e-3,
            batch_size: 16,
            warmup_steps: 200,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Weight of a per-token NLL term on the chosen completion; 0 is plain DPO.
    pub sft_weight: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-5,
            epochs: 3,
            batch_size: 8,
            grad_clip: 1.0,
            sft_weight: 0.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput("DPO beta must be positive".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidInput(
                "DPO batch size and lr must be positive".into(),
            ));
        }
        if !(self.sft_weight >= 0.0) {
            return Err(Error::InvalidInput(
                "DPO sft_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    pub objectives: Vec<Objective>,
    /// Share of minibatches drawn from the decoupling prompts (S3 only).
    pub mix_fraction: f64,
    /// Prompts per optimizer update; each contributes one group.
    pub prompts_per_step: usize,
    pub grad_clip: f64,
    pub sample: SampleParams,
    /// Judge used for the instruction reward during training.
    pub judge: JudgeConfig,
    pub seed: u64,
}

impl GrpoConfig {
    /// Decoupling stage defaults: group of 8, SER + speaker verification.
    pub fn s2() -> Self {
        Self {
            group_size: 8,
            lr: 1e-5,
            epochs: 2,
            clip_epsilon: 0.2,
            kl_beta: 0.1,
            std_floor: 1e-6,
            objectives: vec![Objective::Ser, Objective::Sv],
            mix_fraction: 0.0,
            prompts_per_step: 4,
            grad_clip: 1.0,
            sample: SampleParams::default(),
            judge: JudgeConfig::default(),
            seed: 0,
        }
    }

    /// Instruction stage defaults: group of 6, judge reward, 10% mixing.
    pub fn s3() -> Self {
        Self {
            group_size: 6,
            objectives: vec![Objective::Llm],
            mix_fraction: 0.10,
            judge: JudgeConfig::surrogate(FlipNoise::symmetric_verdict(0.1), 0),
            ..Self::s2()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidInput("group size must be at least 2".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::InvalidInput(
                "clip epsilon must lie in (0, 1)".into(),
            ));
        }
        if !(self.std_floor > 0.0) || !(0.0..=1.0).contains(&self.mix_fraction) {
            return Err(Error::InvalidInput(
                "std floor must be positive and mix fraction in [0, 1]".into(),
            ));
        }
        if self.objectives.is_empty() || self.prompts_per_step == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidInput(
                "objectives, prompts per step and lr must be non-empty/positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self::s2()
    }
}
