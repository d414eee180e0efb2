use proptest::prelude::*;

use super::*;
use crate::numerics::{grad_check, GradCheckOptions, Graph};
use crate::policy::{PolicyConfig, SampleParams};
use crate::synthvoice::vocab::VOCAB_SIZE;
use crate::synthvoice::{
    make_dpo_pairs, make_pretrain_corpus, make_s2_prompts, make_s3_prompts, render_utterance,
    Emotion, Objective, Pitch, PretrainKnobs, RewardVector, S2Knobs, Speed, UtteranceSpec,
};

fn tiny(seed: u64) -> Policy {
    Policy::new(PolicyConfig {
        vocab_size: VOCAB_SIZE,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        max_context: 160,
        seed,
    })
    .unwrap()
}

fn rv(o: Objective, v: f64) -> RewardVector {
    RewardVector::new().with(o, v)
}

fn tiny_grpo(base: GrpoConfig) -> GrpoConfig {
    GrpoConfig {
        group_size: 3,
        epochs: 1,
        prompts_per_step: 2,
        lr: 1e-3,
        sample: SampleParams {
            max_new: 24,
            ..Default::default()
        },
        ..base
    }
}

#[test]
fn dpo_loss_is_ln2_at_reference() {
    let p = tiny(1);
    let pairs = make_dpo_pairs(5, 3).unwrap();
    for pair in &pairs {
        let l = dpo_loss(std::slice::from_ref(pair), &p, &p, 0.1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
    }
    assert!((dpo_loss(&pairs, &p, &p, 0.1).unwrap() - 0.693147).abs() < 1e-6);
    assert!(dpo_loss(&pairs, &p, &p, 0.0).is_err());
}

#[test]
fn dpo_closed_form_example() {
    // Independent scalar oracle: -log(sigmoid(x)) with x = 0.1 * (0.5 + 0.5).
    let x: f64 = 0.1 * ((-1.0 - -1.5) - (-2.0 - -1.5));
    let oracle = -(1.0 / (1.0 + (-x).exp())).ln();
    let got = dpo_loss_from_logprobs(-1.0, -2.0, -1.5, -1.5, 0.1);
    assert!((got - oracle).abs() < 1e-12);
    assert!((got - 0.64440).abs() < 5e-6, "{got}");
}

proptest! {
    #[test]
    fn dpo_loss_moves_the_right_way(w in -30.0..0.0f64, l in -30.0..0.0f64, rw in -30.0..0.0f64,
                                    rl in -30.0..0.0f64, beta in 0.01..1.0f64, d in 0.01..2.0f64) {
        let base = dpo_loss_from_logprobs(w, l, rw, rl, beta);
        prop_assert!(dpo_loss_from_logprobs(w + d, l, rw, rl, beta) < base);
        prop_assert!(dpo_loss_from_logprobs(w, l + d, rw, rl, beta) > base);
    }

    #[test]
    fn advantages_center_and_ignore_affine_maps(
        ser in prop::collection::vec(0.0..1.0f64, 2..9),
        a in 0.1..10.0f64, b in -5.0..5.0f64, rot in 0usize..8,
    ) {
        let objs = [Objective::Ser];
        let rs: Vec<RewardVector> = ser.iter().map(|&v| rv(Objective::Ser, v)).collect();
        let adv = group_advantages(&rs, &objs, 1e-6).unwrap();
        prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9);
        let mapped: Vec<RewardVector> = ser.iter().map(|&v| rv(Objective::Ser, a * v + b)).collect();
        let adv2 = group_advantages(&mapped, &objs, 1e-6 * a).unwrap();
        for (x, y) in adv.iter().zip(&adv2) {
            prop_assert!((x - y).abs() < 1e-7);
        }
        let k = rot % ser.len();
        let mut rotated = rs.clone();
        rotated.rotate_left(k);
        let mut expect = adv.clone();
        expect.rotate_left(k);
        prop_assert_eq!(group_advantages(&rotated, &objs, 1e-6).unwrap(), expect);
    }
}

#[test]
fn advantage_example_with_silent_objective() {
    let rs: Vec<RewardVector> = [0.9, 0.5, 0.1]
        .iter()
        .map(|&s| {
            RewardVector::new()
                .with(Objective::Ser, s)
                .with(Objective::Sv, 1.0)
        })
        .collect();
    let adv = group_advantages(&rs, &[Objective::Ser, Objective::Sv], 1e-6).unwrap();
    // Oracle: population std of [0.9, 0.5, 0.1] is sqrt(0.32/3).
    let std = (0.32f64 / 3.0).sqrt();
    assert!((std - 0.32660).abs() < 5e-6);
    let expect = [0.4 / std, 0.0, -0.4 / std];
    for (a, e) in adv.iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
    assert!((adv[0] - 1.2247).abs() < 5e-5);
    let same = vec![rv(Objective::Llm, 1.0); 4];
    assert_eq!(
        group_advantages(&same, &[Objective::Llm], 1e-6).unwrap(),
        vec![0.0; 4]
    );
    assert!(group_advantages(&rs, &[Objective::Llm], 1e-6).is_err());
}

#[test]
fn grpo_loss_is_zero_on_policy_at_reference() {
    let p = tiny(2);
    let prompt = [1u32, 5, 9, 3];
    let samples = p
        .sample_group(
            &prompt,
            4,
            SampleParams {
                max_new: 12,
                ..Default::default()
            },
            7,
            0,
        )
        .unwrap();
    let comps: Vec<Vec<u32>> = samples.iter().map(|s| s.tokens.clone()).collect();
    let old: Vec<f64> = samples.iter().map(|s| s.logprob).collect();
    let adv = group_advantages(
        &[0.1, 0.7, 0.3, 0.9].map(|v| rv(Objective::Ser, v)),
        &[Objective::Ser],
        1e-6,
    )
    .unwrap();
    let l = grpo_loss(&p, &p, &prompt, &comps, &adv, &old, 0.2, 0.1).unwrap();
    assert!(l.abs() < 1e-12, "{l}");
    assert!(grpo_loss(&p, &p, &prompt, &comps, &adv, &old[..3], 0.2, 0.1).is_err());
}

#[test]
fn ratio_is_clipped() {
    let p = tiny(3);
    let prompt = [1u32, 4];
    let y = vec![vec![60u32, 61, 2]];
    let lp = p.completion_logprob(&prompt, &y[0]).unwrap();
    let old = [lp - 1.5f64.ln()];
    let l = grpo_loss(&p, &p, &prompt, &y, &[1.0], &old, 0.2, 0.0).unwrap();
    assert!((l + 1.2).abs() < 1e-12, "{l}");
    // Negative advantage keeps the unclipped (more pessimistic) branch.
    let l = grpo_loss(&p, &p, &prompt, &y, &[-1.0], &old, 0.2, 0.0).unwrap();
    assert!((l - 1.5).abs() < 1e-9, "{l}");
}

#[test]
fn identical_completions_give_zero_policy_gradient() {
    let p = tiny(4);
    let prompt = [1u32, 7];
    let comps = vec![vec![40u32, 41, 2]; 3];
    let rewards = vec![rv(Objective::Llm, 1.0); 3];
    let adv = group_advantages(&rewards, &[Objective::Llm], 1e-6).unwrap();
    let old: Vec<f64> = comps
        .iter()
        .map(|c| p.completion_logprob(&prompt, c).unwrap())
        .collect();
    let refs: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| p.token_logprobs(&prompt, c).unwrap())
        .collect();
    let batch = GroupBatch {
        prompt: &prompt,
        completions: &comps,
        advantages: &adv,
        old_logprobs: &old,
        ref_token_logprobs: &refs,
    };
    let mut g = Graph::new();
    let pv = p.bind(&mut g);
    let (loss, terms) = grpo_loss_graph(&mut g, &pv, &p, &batch, 0.2, 0.0).unwrap();
    assert_eq!(terms.policy, 0.0);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.global_norm(), 0.0);
}

#[test]
fn grpo_gradient_check() {
    let mut p = Policy::new(PolicyConfig {
        vocab_size: 24,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        max_context: 16,
        seed: 5,
    })
    .unwrap();
    let prompt = [1u32, 5, 9];
    let comps = vec![vec![7u32, 11, 2], vec![13u32, 2]];
    let old: Vec<f64> = comps
        .iter()
        .map(|c| p.completion_logprob(&prompt, c).unwrap() - 0.05)
        .collect();
    let refs: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| {
            p.token_logprobs(&prompt, c)
                .unwrap()
                .iter()
                .map(|v| v - 0.1)
                .collect()
        })
        .collect();
    let adv = [0.8, -0.8];
    let (cfg, names) = (p.config.clone(), p.names.clone());
    let err = grad_check(
        &mut p.params,
        GradCheckOptions {
            per_param: Some(8),
            ..Default::default()
        },
        |ps, want| {
            let m = Policy {
                config: cfg.clone(),
                params: ps.to_vec(),
                names: names.clone(),
            };
            let batch = GroupBatch {
                prompt: &prompt,
                completions: &comps,
                advantages: &adv,
                old_logprobs: &old,
                ref_token_logprobs: &refs,
            };
            let mut g = Graph::new();
            let pv = m.bind(&mut g);
            let (loss, _) = grpo_loss_graph(&mut g, &pv, &m, &batch, 0.2, 0.1)?;
            Ok((
                g.scalar(loss),
                if want { Some(g.backward(loss)?) } else { None },
            ))
        },
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn dpo_gradient_check() {
    let mut p = tiny(6);
    let pairs = make_dpo_pairs(2, 8).unwrap();
    let ref_lp: Vec<(f64, f64)> = reference_logprobs(&p, &pairs)
        .unwrap()
        .iter()
        .map(|&(w, l)| (w + 0.3, l - 0.2))
        .collect();
    let (cfg, names) = (p.config.clone(), p.names.clone());
    let err = grad_check(
        &mut p.params,
        GradCheckOptions {
            per_param: Some(6),
            ..Default::default()
        },
        |ps, want| {
            let m = Policy {
                config: cfg.clone(),
                params: ps.to_vec(),
                names: names.clone(),
            };
            let mut g = Graph::new();
            let pv = m.bind(&mut g);
            let (loss, _) = dpo_loss_graph(&mut g, &pv, &m, &pairs, &ref_lp, 0.1)?;
            Ok((
                g.scalar(loss),
                if want { Some(g.backward(loss)?) } else { None },
            ))
        },
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn anchored_dpo_gradient_check() {
    let mut p = tiny(16);
    let pairs = make_dpo_pairs(2, 18).unwrap();
    let ref_lp = reference_logprobs(&p, &pairs).unwrap();
    let (cfg, names) = (p.config.clone(), p.names.clone());
    let err = grad_check(
        &mut p.params,
        GradCheckOptions {
            per_param: Some(6),
            ..Default::default()
        },
        |ps, want| {
            let m = Policy {
                config: cfg.clone(),
                params: ps.to_vec(),
                names: names.clone(),
            };
            let mut g = Graph::new();
            let pv = m.bind(&mut g);
            let (loss, _) = dpo_objective_graph(&mut g, &pv, &m, &pairs, &ref_lp, 0.1, 0.7)?;
            Ok((
                g.scalar(loss),
                if want { Some(g.backward(loss)?) } else { None },
            ))
        },
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn anchor_adds_mean_per_token_nll() {
    let p = tiny(21);
    let pairs = make_dpo_pairs(3, 22).unwrap();
    let ref_lp: Vec<(f64, f64)> = reference_logprobs(&p, &pairs)
        .unwrap()
        .iter()
        .map(|&(w, l)| (w - 0.4, l + 0.1))
        .collect();
    let eval = |wt: f64| {
        let mut g = Graph::new();
        let pv = p.bind(&mut g);
        let (loss, _) = dpo_objective_graph(&mut g, &pv, &p, &pairs, &ref_lp, 0.1, wt).unwrap();
        g.scalar(loss)
    };
    // scalar oracle from sequence log-probs
    let mut dpo = 0.0;
    let mut nll = 0.0;
    for (t, &(rw, rl)) in pairs.iter().zip(&ref_lp) {
        let w = p.completion_logprob(&t.prompt(), &t.chosen_tokens).unwrap();
        let l = p
            .completion_logprob(&t.prompt(), &t.rejected_tokens)
            .unwrap();
        let x = 0.1 * ((w - rw) - (l - rl));
        dpo += (1.0 + (-x).exp()).ln();
        nll += -w / t.chosen_tokens.len() as f64;
    }
    let n = pairs.len() as f64;
    assert!((eval(0.0) - dpo / n).abs() < 1e-9);
    assert!((eval(2.5) - (dpo / n + 2.5 * nll / n)).abs() < 1e-9);
    let mut g = Graph::new();
    let pv = p.bind(&mut g);
    assert!(dpo_objective_graph(&mut g, &pv, &p, &pairs, &ref_lp, 0.1, -1.0).is_err());
}

#[test]
fn mixing_rate_over_many_minibatches() {
    let tags = mix_sources(5000, 0.10, 11, 0);
    let frac = tags.iter().filter(|&&s| s == Source::S2).count() as f64 / 5000.0;
    assert!((frac - 0.10).abs() <= 0.01, "{frac}");
    assert!(mix_sources(100, 0.0, 1, 0).iter().all(|&s| s == Source::S3));
}

#[test]
fn emotion_reward_follows_the_instruction() {
    let rec = make_s2_prompts(
        40,
        &S2Knobs {
            p_conflict_text: 0.0,
            p_emotional_reference: 1.0,
        },
        5,
    )
    .unwrap()
    .into_iter()
    .next()
    .unwrap();
    let want = rec.meta.emotion.unwrap();
    let conflicting = rec.meta.ref_emotion.unwrap();
    assert_ne!(want, conflicting);
    let utter = |e: Emotion| {
        let spec = UtteranceSpec {
            content: rec.meta.content.clone(),
            emotion: e,
            speaker: rec.meta.speaker.unwrap(),
            pitch: Pitch::Mid,
            speed: Speed::Normal,
            color_noise: 0.0,
        };
        render_utterance(&spec, 1).unwrap()
    };
    let cfg = GrpoConfig::s2();
    let good = score(&rec, &utter(want), Source::S2, &cfg).unwrap();
    let copied = score(&rec, &utter(conflicting), Source::S2, &cfg).unwrap();
    assert!(good.get(Objective::Ser).unwrap() > copied.get(Objective::Ser).unwrap());
    assert_eq!(good.get(Objective::Sv), Some(1.0));

    let sim = GrpoConfig {
        objectives: vec![Objective::Ser, Objective::Sim],
        ..GrpoConfig::s2()
    };
    let r = score(&rec, &utter(want), Source::S2, &sim).unwrap();
    assert!(r.get(Objective::Sim).is_some() && r.get(Objective::Sv).is_none());

    let s3 = make_s3_prompts(1, 3, 2).unwrap();
    for rec in &s3 {
        let r = score(rec, &utter(want), Source::S3, &GrpoConfig::s3()).unwrap();
        assert_eq!(
            r.values.keys().copied().collect::<Vec<_>>(),
            vec![Objective::Llm]
        );
    }
}

#[test]
fn fresh_model_is_near_uniform_and_a_step_descends() {
    let mut p = Policy::new(PolicyConfig {
        d_model: 16,
        n_layers: 1,
        ..Default::default()
    })
    .unwrap();
    let corpus = make_pretrain_corpus(4, &PretrainKnobs::default(), 1).unwrap();
    let ce = mean_ce(&p, &corpus).unwrap();
    assert!((ce - (VOCAB_SIZE as f64).ln()).abs() < 0.05, "{ce}");
    let one = &corpus[..1];
    let before = mean_ce(&p, one).unwrap();
    let cfg = PretrainConfig {
        epochs: 1,
        lr: 1e-3,
        batch_size: 1,
        warmup_steps: 0,
        ..Default::default()
    };
    pretrain(&mut p, one, &cfg).unwrap();
    assert!(mean_ce(&p, one).unwrap() < before);
    assert!(pretrain(&mut p, &[], &cfg).is_err());
}

#[test]
fn dpo_stage_lowers_loss_and_keeps_reference() {
    let mut p = tiny(7);
    let entry = p.clone();
    let pairs = make_dpo_pairs(8, 4).unwrap();
    let held = make_dpo_pairs(4, 5).unwrap();
    let frozen = reference_logprobs(&entry, &held).unwrap();
    let cfg = DpoConfig {
        lr: 1e-2,
        epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    let out = run_s1_dpo(&mut p, &pairs, &held, &cfg).unwrap();
    assert_eq!(out.epochs.len(), 2);
    assert!(out.epochs[1].mean_loss < std::f64::consts::LN_2);
    assert!(dpo_loss(&pairs, &p, &entry, cfg.beta).unwrap() < std::f64::consts::LN_2);
    assert!(out.epochs[0].metrics.contains_key("held_out_margin"));
    assert_eq!(reference_logprobs(&entry, &held).unwrap(), frozen);
}

#[test]
fn grpo_stages_run_and_are_deterministic() {
    let s2 = make_s2_prompts(3, &S2Knobs::default(), 1).unwrap();
    let s3 = make_s3_prompts(1, 2, 1).unwrap();
    let cfgs = StageConfigs {
        s2: tiny_grpo(GrpoConfig::s2()),
        s3: tiny_grpo(GrpoConfig::s3()),
        ..Default::default()
    };
    let run = || {
        let mut p = tiny(8);
        let a = run_s2_grpo(&mut p, &s2, &cfgs.s2).unwrap();
        let b = run_s3_grpo(&mut p, &s3, &s2, &cfgs.s3, &cfgs.s2).unwrap();
        let c = run_joint(&mut p, &s2, &s3, &cfgs.s2, &cfgs.s3).unwrap();
        (p, a, b, c)
    };
    let (p1, a1, b1, c1) = run();
    let (p2, a2, b2, c2) = run();
    assert_eq!((a1.clone(), b1.clone(), c1.clone()), (a2, b2, c2));
    assert_eq!(p1.params, p2.params);
    assert_eq!(a1.steps.len(), 2);
    assert!(a1
        .steps
        .iter()
        .all(|s| s.source.as_deref() == Some("s2") && s.rewards.contains_key("sv")));
    let joint: Vec<_> = c1.steps.iter().map(|s| s.source.clone().unwrap()).collect();
    assert_eq!(joint, ["s2", "s3", "s2", "s3"]);
    assert!(b1
        .steps
        .iter()
        .all(|s| s.source.as_deref() != Some("s3") || !s.rewards.contains_key("sv")));
}

#[test]
fn plans_match_presets_and_reject_unknown_stages() {
    use StageKind::*;
    assert_eq!(
        CurriculumPlan::preset("ppt").unwrap().stages,
        vec![S1, S2, S3]
    );
    assert_eq!(
        CurriculumPlan::preset("s3-first").unwrap().stages,
        vec![S3, S1, S2]
    );
    assert_eq!(
        CurriculumPlan::preset("joint").unwrap().stages,
        vec![S1, Joint]
    );
    for name in CurriculumPlan::PRESETS {
        assert_eq!(CurriculumPlan::parse(name).unwrap().name, name);
    }
    assert_eq!(
        CurriculumPlan::parse("s1, s2").unwrap().stages,
        vec![S1, S2]
    );
    let json = r#"{"name":"x","stages":["s2","s3"]}"#;
    assert_eq!(CurriculumPlan::parse(json).unwrap().stages, vec![S2, S3]);
    assert!(matches!(
        CurriculumPlan::parse("s1,s4"),
        Err(crate::Error::Plan(_))
    ));
    assert!(matches!(
        CurriculumPlan::parse(r#"{"name":"x","stages":["s9"]}"#),
        Err(crate::Error::Plan(_))
    ));
}

#[test]
fn base_plan_is_identity() {
    let mut p = tiny(9);
    let before = p.clone();
    let data = StageData {
        dpo_pairs: &[],
        dpo_held_out: &[],
        s2_prompts: &[],
        s3_prompts: &[],
    };
    let mut seen = 0;
    let out = run_curriculum(
        &mut p,
        &CurriculumPlan::preset("base").unwrap(),
        &data,
        &StageConfigs::paper(),
        |_, _, _| {
            seen += 1;
            Ok(())
        },
    )
    .unwrap();
    assert!(out.is_empty());
    assert_eq!(seen, 0);
    assert_eq!(p.params, before.params);
}
