//! Preference and policy-gradient objectives.

use crate::error::{contract, Error, Result};
use crate::numerics::{softplus, Graph, Var};
use crate::policy::Policy;
use crate::synthvoice::{Objective, PreferenceTriple, RewardVector};

/// `softplus(−β[(w − w_ref) − (l − l_ref)])` for one pair of sequence
/// log-probabilities.
pub fn dpo_loss_from_logprobs(w: f64, l: f64, w_ref: f64, l_ref: f64, beta: f64) -> f64 {
    softplus(-beta * ((w - w_ref) - (l - l_ref)))
}

/// Reference log-probabilities `(chosen, rejected)` for each triple.
pub fn reference_logprobs(
    reference: &Policy,
    batch: &[PreferenceTriple],
) -> Result<Vec<(f64, f64)>> {
    batch
        .iter()
        .map(|t| {
            let p = t.prompt();
            Ok((
                reference.completion_logprob(&p, &t.chosen_tokens)?,
                reference.completion_logprob(&p, &t.rejected_tokens)?,
            ))
        })
        .collect()
}

/// Mean DPO loss over `batch` on the tape. Also returns the mean implicit
/// reward margin `β(Δ_w − Δ_l)`.
pub fn dpo_loss_graph<'a>(
    g: &mut Graph<'a>,
    pv: &[Var],
    policy: &Policy,
    batch: &[PreferenceTriple],
    ref_lp: &[(f64, f64)],
    beta: f64,
) -> Result<(Var, f64)> {
    let (loss, terms) = dpo_objective_graph(g, pv, policy, batch, ref_lp, beta, 0.0)?;
    Ok((loss, terms.margin))
}

/// Logged parts of the anchored preference objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DpoTerms {
    /// Plain DPO loss, without the anchor.
    pub dpo: f64,
    pub margin: f64,
    /// Mean per-token NLL of the chosen completions; 0 when unweighted.
    pub anchor_nll: f64,
}

/// DPO plus `sft_weight` times the per-token NLL of the chosen completion.
/// A zero weight adds nothing to the tape.
pub fn dpo_objective_graph<'a>(
    g: &mut Graph<'a>,
    pv: &[Var],
    policy: &Policy,
    batch: &[PreferenceTriple],
    ref_lp: &[(f64, f64)],
    beta: f64,
    sft_weight: f64,
) -> Result<(Var, DpoTerms)> {
    if !(beta > 0.0) {
        return Err(contract("DPO beta must be positive"));
    }
    if !(sft_weight >= 0.0) {
        return Err(contract("SFT weight must be non-negative"));
    }
    if batch.is_empty() || batch.len() != ref_lp.len() {
        return Err(contract(
            "DPO batch and reference log-probs must be non-empty and aligned",
        ));
    }
    let mut terms = Vec::with_capacity(batch.len());
    let mut nll = Vec::new();
    let mut margin = 0.0;
    for (t, &(rw, rl)) in batch.iter().zip(ref_lp) {
        let p = t.prompt();
        let w = policy.token_logprobs_graph(g, pv, &p, &t.chosen_tokens)?;
        let n_w = t.chosen_tokens.len();
        let w = g.sum(w);
        if sft_weight > 0.0 {
            nll.push(g.scale(w, -1.0 / n_w as f64));
        }
        let l = policy.token_logprobs_graph(g, pv, &p, &t.rejected_tokens)?;
        let l = g.sum(l);
        let diff = g.sub(w, l);
        // −β(Δ_w − Δ_l) = −β(w − l) + β(rw − rl)
        let neg = g.scale(diff, -beta);
        let inner = g.add_scalar(neg, beta * (rw - rl));
        margin += -g.scalar(inner);
        terms.push(g.softplus(inner));
    }
    let stacked = g.stack(&terms);
    let mut loss = g.mean(stacked);
    let mut out = DpoTerms {
        dpo: g.scalar(loss),
        margin: margin / batch.len() as f64,
        anchor_nll: 0.0,
    };
    if !nll.is_empty() {
        let stacked = g.stack(&nll);
        let mean = g.mean(stacked);
        out.anchor_nll = g.scalar(mean);
        let anchor = g.scale(mean, sft_weight);
        loss = g.add(loss, anchor);
    }
    Ok((loss, out))
}

/// Value-only DPO loss of `policy` against `reference`.
pub fn dpo_loss(
    batch: &[PreferenceTriple],
    policy: &Policy,
    reference: &Policy,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(contract("DPO beta must be positive"));
    }
    if batch.is_empty() {
        return Err(contract("empty DPO batch"));
    }
    let pol = reference_logprobs(policy, batch)?;
    let rf = reference_logprobs(reference, batch)?;
    let total: f64 = pol
        .iter()
        .zip(&rf)
        .map(|(&(w, l), &(rw, rl))| dpo_loss_from_logprobs(w, l, rw, rl, beta))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Sum over `objectives` of within-group z-scores (population std).
/// Objectives whose std is at most `std_floor` contribute zero.
pub fn group_advantages(
    rewards: &[RewardVector],
    objectives: &[Objective],
    std_floor: f64,
) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(contract("group advantages need at least two members"));
    }
    let k = rewards.len() as f64;
    let mut adv = vec![0.0; rewards.len()];
    for &o in objectives {
        let vals: Vec<f64> = rewards
            .iter()
            .map(|r| {
                r.get(o)
                    .ok_or_else(|| contract(format!("member lacks objective {}", o.name())))
            })
            .collect::<Result<_>>()?;
        // Sorted sums keep the statistics independent of member order.
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / k;
        let std = (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k).sqrt();
        if std <= std_floor {
            continue;
        }
        for (a, v) in adv.iter_mut().zip(&vals) {
            *a += (v - mean) / std;
        }
    }
    Ok(adv)
}

/// Inputs of the clipped surrogate for one group.
#[derive(Clone, Debug)]
pub struct GroupBatch<'r> {
    pub prompt: &'r [u32],
    pub completions: &'r [Vec<u32>],
    pub advantages: &'r [f64],
    pub old_logprobs: &'r [f64],
    pub ref_token_logprobs: &'r [Vec<f64>],
}

/// Terms of the surrogate, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GrpoTerms {
    pub policy: f64,
    pub kl: f64,
}

/// `−mean_i min(ρ_i A_i, clip(ρ_i, 1−ε, 1+ε) A_i) + kl_beta · mean_i KL_i`
/// with sequence-level ratios `ρ_i = exp(logπ(y_i) − logπ_old(y_i))` and the
/// per-token estimator `exp(r) − r − 1`, `r = logπ_ref − logπ`, summed over
/// each completion.
pub fn grpo_loss_graph<'a>(
    g: &mut Graph<'a>,
    pv: &[Var],
    policy: &Policy,
    grp: &GroupBatch<'_>,
    clip_epsilon: f64,
    kl_beta: f64,
) -> Result<(Var, GrpoTerms)> {
    let k = grp.completions.len();
    if k == 0
        || grp.advantages.len() != k
        || grp.old_logprobs.len() != k
        || grp.ref_token_logprobs.len() != k
    {
        return Err(contract(
            "completions, advantages and logged log-probs must align",
        ));
    }
    let mut surr = Vec::with_capacity(k);
    let mut kls = Vec::with_capacity(k);
    for i in 0..k {
        let y = &grp.completions[i];
        if grp.ref_token_logprobs[i].len() != y.len() {
            return Err(contract(
                "reference log-probs do not match completion length",
            ));
        }
        let tok = policy.token_logprobs_graph(g, pv, grp.prompt, y)?;
        let lp = g.sum(tok);
        let a = grp.advantages[i];
        if a != 0.0 {
            let shifted = g.add_scalar(lp, -grp.old_logprobs[i]);
            let rho = g.exp(shifted);
            let plain = g.scale(rho, a);
            let clipped = g.clamp(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
            let clipped = g.scale(clipped, a);
            surr.push(g.minimum(plain, clipped));
        }
        if kl_beta != 0.0 {
            let rf = g.constant(vec![y.len()], grp.ref_token_logprobs[i].clone());
            let r = g.sub(rf, tok);
            let e = g.exp(r);
            let t = g.sub(e, r);
            let t = g.add_scalar(t, -1.0);
            kls.push(g.sum(t));
        }
    }
    let zero = g.constant_scalar(0.0);
    let policy_term = if surr.is_empty() {
        zero
    } else {
        let s = g.stack(&surr);
        let s = g.sum(s);
        g.scale(s, -1.0 / k as f64)
    };
    let kl_term = if kls.is_empty() {
        zero
    } else {
        let s = g.stack(&kls);
        g.mean(s)
    };
    let terms = GrpoTerms {
        policy: g.scalar(policy_term),
        kl: g.scalar(kl_term),
    };
    let weighted = g.scale(kl_term, kl_beta);
    Ok((g.add(policy_term, weighted), terms))
}

/// Value-only clipped surrogate; the reference log-probs come from `reference`.
pub fn grpo_loss(
    policy: &Policy,
    reference: &Policy,
    prompt: &[u32],
    completions: &[Vec<u32>],
    advantages: &[f64],
    old_logprobs: &[f64],
    clip_epsilon: f64,
    kl_beta: f64,
) -> Result<f64> {
    if completions.len() != old_logprobs.len() {
        return Err(Error::Contract(
            "completions and old log-probs differ in length".into(),
        ));
    }
    let refs: Vec<Vec<f64>> = completions
        .iter()
        .map(|y| reference.token_logprobs(prompt, y))
        .collect::<Result<_>>()?;
    let grp = GroupBatch {
        prompt,
        completions,
        advantages,
        old_logprobs,
        ref_token_logprobs: &refs,
    };
    let mut g = Graph::new();
    let pv = policy.bind(&mut g);
    let (loss, _) = grpo_loss_graph(&mut g, &pv, policy, &grp, clip_epsilon, kl_beta)?;
    Ok(g.scalar(loss))
}
