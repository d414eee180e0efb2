use rand::seq::SliceRandom;

use super::config::PretrainConfig;
use super::{apply_update, EpochSummary, StageOutcome, StepLog};
use crate::error::{contract, Result};
use crate::numerics::{Adam, Gradients, Graph};
use crate::policy::Policy;
use crate::rng;
use crate::synthvoice::PromptRecord;

/// Next-token cross-entropy over target tokens only, averaged per token over
/// the batch. Returns the loss and, optionally, its gradients.
pub fn ce_loss(
    policy: &Policy,
    batch: &[&PromptRecord],
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let total: usize = batch
        .iter()
        .map(|r| r.target_tokens.as_ref().map_or(0, Vec::len))
        .sum();
    if total == 0 {
        return Err(contract("batch has no target tokens"));
    }
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for r in batch {
        let target = r
            .target_tokens
            .as_ref()
            .ok_or_else(|| contract("pretraining record without target"))?;
        let mut g = Graph::new();
        let pv = policy.bind(&mut g);
        let lp = policy.token_logprobs_graph(&mut g, &pv, &r.prompt(), target)?;
        let s = g.sum(lp);
        let l = g.scale(s, -1.0 / total as f64);
        loss += g.scalar(l);
        if want_grad {
            grads.merge(&g.backward(l)?);
        }
    }
    Ok((loss, want_grad.then_some(grads)))
}

/// Mean per-token cross-entropy without gradients.
pub fn mean_ce(policy: &Policy, records: &[PromptRecord]) -> Result<f64> {
    let (mut nll, mut n) = (0.0, 0usize);
    for r in records {
        if let Some(t) = &r.target_tokens {
            nll -= policy.completion_logprob(&r.prompt(), t)?;
            n += t.len();
        }
    }
    if n == 0 {
        return Err(contract("no target tokens"));
    }
    Ok(nll / n as f64)
}

fn schedule(cfg: &PretrainConfig, step: usize, total: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let rest = total.saturating_sub(cfg.warmup_steps).max(1);
    cfg.lr * (1.0 - (step - cfg.warmup_steps) as f64 / rest as f64).max(0.05)
}

/// Teacher-forced training on the corpus targets.
pub fn pretrain(
    model: &mut Policy,
    corpus: &[PromptRecord],
    cfg: &PretrainConfig,
) -> Result<StageOutcome> {
    if corpus.is_empty() {
        return Err(contract("empty pretraining corpus"));
    }
    let mut opt = Adam::for_params(cfg.lr, &model.params);
    let per_epoch = corpus.len().div_ceil(cfg.batch_size.max(1));
    let total = per_epoch * cfg.epochs;
    let mut out = StageOutcome::new("pretrain");
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng::rng(cfg.seed, &[0x97e, epoch as u64]));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&PromptRecord> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, grads) = ce_loss(model, &batch, true)?;
            opt.lr = schedule(cfg, step, total);
            apply_update(model, &mut opt, grads.expect("requested"), cfg.grad_clip)?;
            out.steps.push(StepLog::new(step, "pretrain", loss));
            sum += loss;
            step += 1;
        }
        out.epochs
            .push(EpochSummary::new(epoch, sum / per_epoch as f64));
    }
    Ok(out)
}
