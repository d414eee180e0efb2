use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{DpoConfig, GrpoConfig};
use super::{run_joint, run_s1_dpo, run_s2_grpo, run_s3_grpo, StageOutcome};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::synthvoice::{PreferenceTriple, PromptRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    S1,
    S2,
    S3,
    Joint,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::S1 => "s1",
            StageKind::S2 => "s2",
            StageKind::S3 => "s3",
            StageKind::Joint => "joint",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "dpo" => Ok(StageKind::S1),
            "s2" => Ok(StageKind::S2),
            "s3" => Ok(StageKind::S3),
            "joint" | "s2+s3" => Ok(StageKind::Joint),
            other => Err(Error::Plan(format!("unknown stage {other:?}"))),
        }
    }
}

/// An ordered list of stages applied to one starting checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub name: String,
    pub stages: Vec<StageKind>,
}

impl CurriculumPlan {
    pub const PRESETS: [&'static str; 8] = [
        "base", "s3", "s3-s1", "s3-first", "joint", "s1", "s1-s2", "ppt",
    ];

    pub fn new(name: &str, stages: Vec<StageKind>) -> Self {
        Self {
            name: name.to_string(),
            stages,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        use StageKind::*;
        let stages = match name {
            "base" => vec![],
            "s3" => vec![S3],
            "s3-s1" => vec![S3, S1],
            "s3-first" => vec![S3, S1, S2],
            "joint" => vec![S1, Joint],
            "s1" => vec![S1],
            "s1-s2" => vec![S1, S2],
            "ppt" => vec![S1, S2, S3],
            other => return Err(Error::Plan(format!("unknown plan {other:?}"))),
        };
        Ok(Self::new(name, stages))
    }

    /// A preset name, a comma list of stages (`s1,s2,s3`), or a JSON plan.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.starts_with('{') {
            return serde_json::from_str(t).map_err(|e| Error::Plan(e.to_string()));
        }
        if let Ok(p) = Self::preset(t) {
            return Ok(p);
        }
        let stages = t
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(t, stages))
    }
}

pub struct StageData<'d> {
    pub dpo_pairs: &'d [PreferenceTriple],
    pub dpo_held_out: &'d [PreferenceTriple],
    pub s2_prompts: &'d [PromptRecord],
    pub s3_prompts: &'d [PromptRecord],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfigs {
    pub dpo: DpoConfig,
    pub s2: GrpoConfig,
    pub s3: GrpoConfig,
}

impl StageConfigs {
    pub fn paper() -> Self {
        Self {
            dpo: DpoConfig::default(),
            s2: GrpoConfig::s2(),
            s3: GrpoConfig::s3(),
        }
    }
}

/// Runs each stage in order; every stage freezes its own reference at entry.
/// `after_stage` sees the model after each stage (e.g. for evaluation).
pub fn run_curriculum(
    model: &mut Policy,
    plan: &CurriculumPlan,
    data: &StageData<'_>,
    cfgs: &StageConfigs,
    mut after_stage: impl FnMut(usize, StageKind, &Policy) -> Result<()>,
) -> Result<Vec<StageOutcome>> {
    let mut outcomes = Vec::with_capacity(plan.stages.len());
    for (i, &stage) in plan.stages.iter().enumerate() {
        let out = match stage {
            StageKind::S1 => run_s1_dpo(model, data.dpo_pairs, data.dpo_held_out, &cfgs.dpo)?,
            StageKind::S2 => run_s2_grpo(model, data.s2_prompts, &cfgs.s2)?,
            StageKind::S3 => {
                run_s3_grpo(model, data.s3_prompts, data.s2_prompts, &cfgs.s3, &cfgs.s2)?
            }
            StageKind::Joint => {
                run_joint(model, data.s2_prompts, data.s3_prompts, &cfgs.s2, &cfgs.s3)?
            }
        };
        outcomes.push(out);
        after_stage(i, stage, model)?;
    }
    Ok(outcomes)
}
