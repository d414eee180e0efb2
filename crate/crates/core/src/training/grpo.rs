//! Group-relative policy optimisation for the decoupling and instruction
//! stages, plus their interleaved joint variant.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GrpoConfig;
use super::losses::{group_advantages, grpo_loss_graph, GroupBatch, GrpoTerms};
use super::{apply_update, EpochSummary, StageOutcome, StepLog};
use crate::error::{contract, Result};
use crate::numerics::{Adam, Gradients, Graph};
use crate::policy::Policy;
use crate::rng;
use crate::synthvoice::{
    judge, parse_instruction, requested_emotion, ser_oracle, speaker_similarity, sv_oracle,
    Objective, PromptRecord, RewardVector, TokenSeq,
};

/// Which prompt pool a minibatch came from; decides the reward wiring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    S2,
    S3,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::S2 => "s2",
            Source::S3 => "s3",
        }
    }
}

/// One prompt with its sampled group, rewards and advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRollout {
    pub prompt: PromptRecord,
    pub source: Source,
    pub completions: Vec<TokenSeq>,
    pub rewards: Vec<RewardVector>,
    pub advantages: Vec<f64>,
    pub logprobs_policy: Vec<f64>,
    pub logprobs_ref: Vec<f64>,
    pub ref_token_logprobs: Vec<Vec<f64>>,
    pub truncated: Vec<bool>,
}

/// Rewards of one completion. Decoupling prompts are scored for emotion
/// against the instruction label and for speaker against the reference;
/// instruction prompts only by the judge.
pub fn score(
    record: &PromptRecord,
    completion: &[u32],
    source: Source,
    cfg: &GrpoConfig,
) -> Result<RewardVector> {
    let mut rv = RewardVector::new();
    match source {
        Source::S2 => {
            let label = requested_emotion(&parse_instruction(&record.instruction_tokens))
                .or(record.meta.emotion)
                .ok_or_else(|| contract("decoupling prompt names no emotion"))?;
            rv = rv.with(Objective::Ser, ser_oracle(completion, label).1);
            let reference = record
                .reference_tokens
                .as_ref()
                .ok_or_else(|| contract("decoupling prompt without reference"))?;
            for o in &cfg.objectives {
                match o {
                    Objective::Sv => {
                        rv = rv.with(Objective::Sv, sv_oracle(completion, reference)? as f64)
                    }
                    Objective::Sim => {
                        rv = rv.with(Objective::Sim, speaker_similarity(completion, reference))
                    }
                    _ => {}
                }
            }
        }
        Source::S3 => {
            let v = judge(
                completion,
                &record.instruction_tokens,
                &record.text_tokens,
                &cfg.judge,
            );
            rv = rv.with(Objective::Llm, v as f64);
        }
    }
    Ok(rv)
}

/// Samples a group from `policy` and fills rewards, advantages and the
/// reference log-probabilities.
pub fn rollout(
    policy: &Policy,
    reference: &Policy,
    record: &PromptRecord,
    source: Source,
    cfg: &GrpoConfig,
    seed: u64,
    prompt_id: u64,
) -> Result<GroupRollout> {
    let prompt = record.prompt();
    let samples = policy.sample_group(&prompt, cfg.group_size, cfg.sample, seed, prompt_id)?;
    let completions: Vec<TokenSeq> = samples.iter().map(|s| s.tokens.clone()).collect();
    let rewards = completions
        .iter()
        .map(|c| score(record, c, source, cfg))
        .collect::<Result<Vec<_>>>()?;
    let objectives: Vec<Objective> = match source {
        Source::S2 => cfg
            .objectives
            .iter()
            .copied()
            .filter(|o| *o != Objective::Llm)
            .collect(),
        Source::S3 => vec![Objective::Llm],
    };
    let advantages = group_advantages(&rewards, &objectives, cfg.std_floor)?;
    let ref_token_logprobs = reference.token_logprobs_many(&prompt, &completions)?;
    Ok(GroupRollout {
        prompt: record.clone(),
        source,
        logprobs_ref: ref_token_logprobs.iter().map(|v| v.iter().sum()).collect(),
        ref_token_logprobs,
        logprobs_policy: samples.iter().map(|s| s.logprob).collect(),
        truncated: samples.iter().map(|s| s.truncated).collect(),
        completions,
        rewards,
        advantages,
    })
}

/// Loss and gradients of a minibatch of groups, averaged over groups.
pub fn groups_loss(
    policy: &Policy,
    groups: &[GroupRollout],
    clip_epsilon: f64,
    kl_beta: f64,
) -> Result<(f64, GrpoTerms, Gradients)> {
    if groups.is_empty() {
        return Err(contract("no groups in minibatch"));
    }
    let n = groups.len() as f64;
    let mut grads = Gradients::default();
    let (mut loss, mut terms) = (0.0, GrpoTerms::default());
    for grp in groups {
        let prompt = grp.prompt.prompt();
        let batch = GroupBatch {
            prompt: &prompt,
            completions: &grp.completions,
            advantages: &grp.advantages,
            old_logprobs: &grp.logprobs_policy,
            ref_token_logprobs: &grp.ref_token_logprobs,
        };
        let mut g = Graph::new();
        let pv = policy.bind(&mut g);
        let (l, t) = grpo_loss_graph(&mut g, &pv, policy, &batch, clip_epsilon, kl_beta)?;
        let l = g.scale(l, 1.0 / n);
        loss += g.scalar(l);
        terms.policy += t.policy / n;
        terms.kl += t.kl / n;
        grads.merge(&g.backward(l)?);
    }
    Ok((loss, terms, grads))
}

/// Per-minibatch source tags: decoupling with probability `fraction`.
pub fn mix_sources(n_batches: usize, fraction: f64, seed: u64, epoch: usize) -> Vec<Source> {
    (0..n_batches)
        .map(|b| {
            let u: f64 = rng::rng(seed, &[0x313, epoch as u64, b as u64]).gen();
            if u < fraction {
                Source::S2
            } else {
                Source::S3
            }
        })
        .collect()
}

struct Pool<'d> {
    records: &'d [PromptRecord],
    cfg: &'d GrpoConfig,
    order: Vec<usize>,
    cursor: usize,
    id_offset: u64,
    source: Source,
}

impl<'d> Pool<'d> {
    fn new(records: &'d [PromptRecord], cfg: &'d GrpoConfig, source: Source) -> Self {
        let id_offset = if source == Source::S2 {
            0
        } else {
            S3_ID_OFFSET
        };
        Self {
            records,
            cfg,
            order: Vec::new(),
            cursor: 0,
            id_offset,
            source,
        }
    }

    fn reshuffle(&mut self, seed: u64, epoch: usize) {
        self.order = (0..self.records.len()).collect();
        self.order
            .shuffle(&mut rng::rng(seed, &[0x5f1, self.id_offset, epoch as u64]));
        self.cursor = 0;
    }

    fn batches(&self) -> usize {
        self.records.len().div_ceil(self.cfg.prompts_per_step)
    }

    /// Next chunk, wrapping around the epoch order.
    fn take(&mut self) -> Vec<usize> {
        let n = self.cfg.prompts_per_step.min(self.records.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn mean_rewards(groups: &[GroupRollout]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for g in groups {
        for r in &g.rewards {
            for (o, v) in &r.values {
                let e = sums.entry(o.name().to_string()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Drives minibatches from one or two pools under a single optimizer. Each
/// sampled minibatch gets exactly one update (on-policy).
fn drive(
    model: &mut Policy,
    stage: &str,
    tag: u64,
    pools: &mut [Pool<'_>],
    plan: impl Fn(usize, &[Pool<'_>]) -> Vec<usize>,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> Result<StageOutcome> {
    let reference = model.clone();
    let mut opt = Adam::for_params(lr, &model.params);
    let mut out = StageOutcome::new(stage);
    let mut step = 0;
    for epoch in 0..epochs {
        for p in pools.iter_mut() {
            p.reshuffle(seed, epoch);
        }
        let schedule = plan(epoch, pools);
        let mut sum = 0.0;
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (b, &pi) in schedule.iter().enumerate() {
            let idx = pools[pi].take();
            let pool = &pools[pi];
            let source = pool.source;
            let sample_seed = rng::derive(seed, &[tag, epoch as u64, b as u64]);
            let groups: Vec<GroupRollout> = idx
                .par_iter()
                .map(|&i| {
                    rollout(
                        model,
                        &reference,
                        &pool.records[i],
                        source,
                        pool.cfg,
                        sample_seed,
                        pool.id_offset + i as u64,
                    )
                })
                .collect::<Result<_>>()?;
            let (loss, terms, grads) =
                groups_loss(model, &groups, pool.cfg.clip_epsilon, pool.cfg.kl_beta)?;
            apply_update(model, &mut opt, grads, pool.cfg.grad_clip)?;
            let mut log = StepLog::new(step, stage, loss);
            log.source = Some(source.name().to_string());
            log.kl = Some(terms.kl);
            log.rewards = mean_rewards(&groups);
            let trunc = groups
                .iter()
                .flat_map(|g| &g.truncated)
                .filter(|&&t| t)
                .count();
            let total = groups.iter().map(|g| g.truncated.len()).sum::<usize>();
            log.truncated = Some(trunc as f64 / total as f64);
            for (k, v) in &log.rewards {
                let e = acc
                    .entry(format!("{}_{k}", source.name()))
                    .or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
            out.steps.push(log);
            sum += loss;
            step += 1;
        }
        let mut summary = EpochSummary::new(epoch, sum / schedule.len().max(1) as f64);
        summary.metrics = acc
            .into_iter()
            .map(|(k, (s, n))| (format!("mean_{k}"), s / n as f64))
            .collect();
        out.epochs.push(summary);
    }
    Ok(out)
}

/// Decoupling stage: emotion reward against the instruction, speaker reward
/// against the reference (or the similarity variant).
pub fn run_s2_grpo(
    model: &mut Policy,
    prompts: &[PromptRecord],
    cfg: &GrpoConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(contract("empty decoupling prompt set"));
    }
    let mut pools = [Pool::new(prompts, cfg, Source::S2)];
    drive(
        model,
        "s2",
        0x52,
        &mut pools,
        |_, p| vec![0; p[0].batches()],
        cfg.epochs,
        cfg.seed,
        cfg.lr,
    )
}

const S3_ID_OFFSET: u64 = 1 << 32;

/// Instruction stage: judge reward on instruction prompts, with a share of
/// minibatches drawn from the decoupling prompts and scored as there.
pub fn run_s3_grpo(
    model: &mut Policy,
    s3_prompts: &[PromptRecord],
    s2_prompts: &[PromptRecord],
    cfg: &GrpoConfig,
    s2_cfg: &GrpoConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    s2_cfg.validate()?;
    if s3_prompts.is_empty() {
        return Err(contract("empty instruction prompt set"));
    }
    if s2_prompts.is_empty() && cfg.mix_fraction > 0.0 {
        return Err(contract("mixing requested without decoupling prompts"));
    }
    let mut pools = [
        Pool::new(s2_prompts, s2_cfg, Source::S2),
        Pool::new(s3_prompts, cfg, Source::S3),
    ];
    let (seed, frac) = (cfg.seed, cfg.mix_fraction);
    drive(
        model,
        "s3",
        0x53,
        &mut pools,
        |epoch, p| {
            mix_sources(p[1].batches(), frac, seed, epoch)
                .into_iter()
                .map(|s| if s == Source::S2 { 0 } else { 1 })
                .collect()
        },
        cfg.epochs,
        cfg.seed,
        cfg.lr,
    )
}

/// Both stages at once: decoupling and instruction minibatches strictly
/// alternate under one optimizer; the smaller pool wraps around.
pub fn run_joint(
    model: &mut Policy,
    s2_prompts: &[PromptRecord],
    s3_prompts: &[PromptRecord],
    s2_cfg: &GrpoConfig,
    s3_cfg: &GrpoConfig,
) -> Result<StageOutcome> {
    s2_cfg.validate()?;
    s3_cfg.validate()?;
    if s2_prompts.is_empty() || s3_prompts.is_empty() {
        return Err(contract("joint stage needs both prompt sets"));
    }
    let mut pools = [
        Pool::new(s2_prompts, s2_cfg, Source::S2),
        Pool::new(s3_prompts, s3_cfg, Source::S3),
    ];
    let epochs = s2_cfg.epochs.max(s3_cfg.epochs);
    drive(
        model,
        "joint",
        0x1017,
        &mut pools,
        |_, p| {
            (0..p[0].batches() + p[1].batches())
                .map(|b| b % 2)
                .collect()
        },
        epochs,
        s3_cfg.seed,
        s3_cfg.lr,
    )
}
