//! Pretraining and the three alignment stages, plus curriculum plumbing.

mod config;
mod curriculum;
mod dpo;
mod grpo;
mod losses;
mod pretrain;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use config::{DpoConfig, GrpoConfig, PretrainConfig};
pub use curriculum::{run_curriculum, CurriculumPlan, StageConfigs, StageData, StageKind};
pub use dpo::{implicit_margin, run_s1_dpo};
pub use grpo::{
    groups_loss, mix_sources, rollout, run_joint, run_s2_grpo, run_s3_grpo, score, GroupRollout,
    Source,
};
pub use losses::{
    dpo_loss, dpo_loss_from_logprobs, dpo_loss_graph, dpo_objective_graph, group_advantages,
    grpo_loss, grpo_loss_graph, reference_logprobs, DpoTerms, GroupBatch, GrpoTerms,
};
pub use pretrain::{ce_loss, mean_ce, pretrain};

use crate::error::Result;
use crate::numerics::{Adam, Gradients};
use crate::policy::Policy;

/// One optimizer step worth of diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub rewards: BTreeMap<String, f64>,
}

impl StepLog {
    pub fn new(step: usize, stage: &str, loss: f64) -> Self {
        Self {
            step,
            stage: stage.to_string(),
            loss,
            margin: None,
            anchor_nll: None,
            kl: None,
            source: None,
            truncated: None,
            rewards: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl EpochSummary {
    pub fn new(epoch: usize, mean_loss: f64) -> Self {
        Self {
            epoch,
            mean_loss,
            metrics: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochSummary>,
}

impl StageOutcome {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            steps: Vec::new(),
            epochs: Vec::new(),
        }
    }
}

/// Clips to global norm `grad_clip` (when positive) and takes one Adam step.
pub(crate) fn apply_update(
    model: &mut Policy,
    opt: &mut Adam,
    mut grads: Gradients,
    grad_clip: f64,
) -> Result<()> {
    if grad_clip > 0.0 {
        let norm = grads.global_norm();
        if norm > grad_clip {
            grads.scale(grad_clip / norm);
        }
    }
    opt.step(&mut model.params, &grads)
}
