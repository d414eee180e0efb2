use rand::seq::SliceRandom;

use super::config::DpoConfig;
use super::losses::{dpo_objective_graph, reference_logprobs};
use super::{apply_update, EpochSummary, StageOutcome, StepLog};
use crate::error::{contract, Result};
use crate::numerics::{Adam, Graph};
use crate::policy::Policy;
use crate::rng;
use crate::synthvoice::PreferenceTriple;

/// Mean implicit reward margin `β(Δ_w − Δ_l)` of `policy` over `pairs`.
pub fn implicit_margin(
    policy: &Policy,
    reference: &Policy,
    pairs: &[PreferenceTriple],
    beta: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(contract("no pairs"));
    }
    let p = reference_logprobs(policy, pairs)?;
    let r = reference_logprobs(reference, pairs)?;
    let total: f64 = p
        .iter()
        .zip(&r)
        .map(|(&(w, l), &(rw, rl))| beta * ((w - rw) - (l - rl)))
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Preference optimisation against a reference frozen at stage entry. The
/// logged loss is the plain DPO term even when the NLL anchor is on.
/// `held_out` pairs, when given, get their mean margin logged per epoch.
pub fn run_s1_dpo(
    model: &mut Policy,
    pairs: &[PreferenceTriple],
    held_out: &[PreferenceTriple],
    cfg: &DpoConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(contract("empty preference set"));
    }
    let reference = model.clone();
    let ref_lp = reference_logprobs(&reference, pairs)?;
    let mut opt = Adam::for_params(cfg.lr, &model.params);
    let mut out = StageOutcome::new("s1");
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::rng(cfg.seed, &[0xd9, epoch as u64]));
        let (mut sum, mut anchor, mut n) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PreferenceTriple> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let rl: Vec<(f64, f64)> = chunk.iter().map(|&i| ref_lp[i]).collect();
            let (terms, grads) = {
                let mut g = Graph::new();
                let pv = model.bind(&mut g);
                let (loss, terms) =
                    dpo_objective_graph(&mut g, &pv, model, &batch, &rl, cfg.beta, cfg.sft_weight)?;
                (terms, g.backward(loss)?)
            };
            apply_update(model, &mut opt, grads, cfg.grad_clip)?;
            let mut log = StepLog::new(step, "s1", terms.dpo);
            log.margin = Some(terms.margin);
            if cfg.sft_weight > 0.0 {
                log.anchor_nll = Some(terms.anchor_nll);
            }
            out.steps.push(log);
            sum += terms.dpo;
            anchor += terms.anchor_nll;
            n += 1;
            step += 1;
        }
        let mut summary = EpochSummary::new(epoch, sum / n as f64);
        if cfg.sft_weight > 0.0 {
            summary
                .metrics
                .insert("anchor_nll".into(), anchor / n as f64);
        }
        if !held_out.is_empty() {
            summary.metrics.insert(
                "held_out_margin".into(),
                implicit_margin(model, &reference, held_out, cfg.beta)?,
            );
        }
        out.epochs.push(summary);
    }
    Ok(out)
}
