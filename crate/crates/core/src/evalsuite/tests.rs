use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyConfig};
use crate::rng;
use crate::synthvoice::{
    make_s3_prompts, render_utterance, text_phonemes, Emotion, FlipNoise, JudgeConfig, Pitch,
    PromptRecord, Speed, TokenSeq, UtteranceSpec,
};

fn per_emotion(task: &EvalTask) -> [usize; 5] {
    let mut c = [0; 5];
    for r in &task.records {
        c[r.meta.emotion.unwrap().index()] += 1;
    }
    c
}

#[test]
fn eval_sets_are_balanced_and_respect_their_conflicts() {
    for kind in TaskKind::ALL {
        let t = build_eval_set(kind, 500, 3).unwrap();
        assert_eq!(per_emotion(&t), [100; 5]);
        for r in &t.records {
            let want = r.meta.emotion.unwrap();
            match (kind.task_type, kind.difficulty) {
                (TaskType::TO, Difficulty::Easy) => {
                    assert!(r.reference_tokens.is_none());
                    assert_eq!(r.meta.text_emotion, Some(Emotion::Neutral));
                }
                (TaskType::TO, Difficulty::Hard) => {
                    assert!(r.reference_tokens.is_none());
                    assert_ne!(r.meta.text_emotion, Some(want));
                }
                (TaskType::TR, Difficulty::Easy) => {
                    assert!(r.reference_tokens.is_some());
                    assert_eq!(r.meta.ref_emotion, Some(Emotion::Neutral));
                }
                (TaskType::TR, Difficulty::Hard) => {
                    assert!(r.reference_tokens.is_some());
                    let re = r.meta.ref_emotion.unwrap();
                    assert!(re != want && re != Emotion::Neutral);
                }
            }
        }
        assert_eq!(t, build_eval_set(kind, 500, 3).unwrap());
    }
    let odd = build_eval_set(TaskKind::ALL[0], 503, 1).unwrap();
    assert_eq!(odd.records.len(), 500);
    assert_eq!(odd.warnings.len(), 1);
    assert!(build_eval_set(TaskKind::ALL[0], 4, 1).is_err());
}

#[test]
fn task_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = build_eval_set("TR-hard".parse().unwrap(), 10, 2).unwrap();
    let p = dir.path().join("t.jsonl");
    t.write(&p).unwrap();
    assert_eq!(
        EvalTask::read(&p).unwrap(),
        EvalTask {
            warnings: vec![],
            ..t
        }
    );
}

fn copy_reference(r: &PromptRecord) -> Result<(TokenSeq, bool)> {
    Ok((r.reference_tokens.clone().expect("reference task"), false))
}

#[test]
fn oracle_closures() {
    let to_hard = build_eval_set("TO-hard".parse().unwrap(), 50, 4).unwrap();
    let rep = evaluate(&oracle_generator, &to_hard).unwrap();
    assert_eq!(
        (rep.acc_i, rep.acc_t, rep.acc_r, rep.sv_rate),
        (1.0, Some(0.0), None, None)
    );
    assert_eq!(rep.e_sim, 1.0);
    assert_eq!(rep.content_error_mean, 0.0);

    let tr_hard = build_eval_set("TR-hard".parse().unwrap(), 50, 4).unwrap();
    let rep = evaluate(&copy_reference, &tr_hard).unwrap();
    assert_eq!(
        (rep.acc_i, rep.acc_r, rep.sv_rate, rep.acc_t),
        (0.0, Some(1.0), Some(1.0), None)
    );

    let trunc = |r: &PromptRecord| oracle_generator(r).map(|(t, _)| (t, true));
    let rep = evaluate(&trunc, &tr_hard).unwrap();
    assert_eq!(
        (rep.n_scored, rep.n_truncated, rep.content_error_mean),
        (0, 50, 1.0)
    );
}

#[test]
fn spearman_basics_and_tied_example() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    assert!(matches!(
        spearman(&[1.0, 2.0, 3.0], &[2.0; 3]),
        Err(Error::UndefinedCorrelation(_))
    ));
    assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());

    // Brute-force oracle: rank = 1 + #smaller + (#equal - 1) / 2, then Pearson.
    let levels = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
    let values = [1.0, 1.2, 2.0, 1.9, 3.1, 2.8];
    let rank = |xs: &[f64]| -> Vec<f64> {
        xs.iter()
            .map(|x| {
                let less = xs.iter().filter(|y| *y < x).count() as f64;
                let eq = xs.iter().filter(|y| *y == x).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    };
    let (a, b) = (rank(&levels), rank(&values));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let oracle = cov / (va * vb).sqrt();
    let got = spearman(&levels, &values).unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert!((got - 0.956183).abs() < 1e-6, "{got}");
}

proptest! {
    #[test]
    fn spearman_ignores_monotone_maps(xs in prop::collection::vec(-5.0..5.0f64, 3..30), seed in 0u64..1000) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = xs.iter().map(|_| r.gen_range(-3.0..3.0)).collect();
        if let Ok(base) = spearman(&xs, &ys) {
            let xs2: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let ys2: Vec<f64> = ys.iter().map(|y| 2.0 * y * y * y + 1.0).collect();
            prop_assert!((spearman(&xs2, &ys2).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_of_self_is_one(bits in prop::collection::vec(0u8..2, 2..50)) {
        prop_assume!(bits.contains(&0) && bits.contains(&1));
        prop_assert_eq!(macro_f1(&bits, &bits).unwrap(), 1.0);
    }
}

#[test]
fn macro_f1_example() {
    assert_eq!(macro_f1(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap(), 0.5);
    assert_eq!(macro_f1(&[1, 1], &[1, 1]).unwrap(), 1.0);
    assert_eq!(macro_f1(&[1, 1], &[1, 0]).unwrap(), (2.0 / 3.0 + 0.0) / 2.0);
    assert!(macro_f1(&[1], &[]).is_err());
}

/// Follows the instruction except for a seeded half of the prompts, where
/// the emotion is wrong.
pub(crate) fn half_wrong(r: &PromptRecord) -> Result<(TokenSeq, bool)> {
    let (tokens, _) = oracle_generator(r)?;
    if rng::hash_tokens(5, &[&r.instruction_tokens, &r.text_tokens]) % 2 == 0 {
        return Ok((tokens, false));
    }
    let d = crate::synthvoice::decode_attributes(&tokens);
    let spec = UtteranceSpec {
        content: text_phonemes(&r.text_tokens),
        emotion: Emotion::ALL[(d.emotion_argmax().index() + 1) % 5],
        speaker: 0,
        pitch: d.pitch.unwrap_or(Pitch::Mid),
        speed: Speed::Normal,
        color_noise: 0.0,
    };
    Ok((render_utterance(&spec, 0)?, false))
}

/// Independent macro-F1 from a confusion matrix.
fn confusion_f1(gold: &[u8], pred: &[u8]) -> f64 {
    let mut m = [[0f64; 2]; 2];
    for (&g, &p) in gold.iter().zip(pred) {
        m[g as usize][p as usize] += 1.0;
    }
    let f = |c: usize| {
        let tp = m[c][c];
        let prec = tp / (m[0][c] + m[1][c]);
        let rec = tp / (m[c][0] + m[c][1]);
        2.0 * prec * rec / (prec + rec)
    };
    (f(0) + f(1)) / 2.0
}

#[test]
fn judge_agreement_matches_flip_simulation() {
    let prompts = make_s3_prompts(0, 2000, 17).unwrap();
    let gold = JudgeConfig::gold();
    let clean = judge_agreement_study(
        &half_wrong,
        &prompts,
        &gold,
        &JudgeConfig::surrogate(FlipNoise::default(), 3),
    )
    .unwrap();
    assert_eq!(clean.overall, 1.0);
    assert!(clean.by_config.values().all(|&v| v == 1.0));
    assert!(
        clean.gold_pass_rate > 0.2 && clean.gold_pass_rate < 0.8,
        "{}",
        clean.gold_pass_rate
    );

    let noisy = JudgeConfig::surrogate(FlipNoise::symmetric_verdict(0.1), 3);
    let study = judge_agreement_study(&half_wrong, &prompts, &gold, &noisy).unwrap();
    let labels: Vec<u8> = prompts
        .iter()
        .map(|r| {
            let (t, _) = half_wrong(r).unwrap();
            crate::synthvoice::judge(&t, &r.instruction_tokens, &r.text_tokens, &gold)
        })
        .collect();
    let mut sim = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let reps = 300;
    let mut total = 0.0;
    for _ in 0..reps {
        let flipped: Vec<u8> = labels
            .iter()
            .map(|&g| if sim.gen::<f64>() < 0.1 { 1 - g } else { g })
            .collect();
        total += confusion_f1(&labels, &flipped);
    }
    let expected = total / reps as f64;
    assert!(
        (study.overall - expected).abs() <= 0.03,
        "{} vs {expected}",
        study.overall
    );
    assert!((expected - 0.8996).abs() < 0.01, "{expected}");
}

#[test]
fn speed_pitch_oracle_and_null() {
    let rep = speed_pitch_study(&oracle_generator, 30, 1).unwrap();
    assert_eq!(rep.speed.spearman, Some(1.0));
    assert_eq!(rep.pitch.spearman, Some(1.0));
    let random = |r: &PromptRecord| {
        let mut g = rng::rng(
            rng::hash_tokens(8, &[&r.instruction_tokens, &r.text_tokens]),
            &[],
        );
        let spec = UtteranceSpec {
            content: text_phonemes(&r.text_tokens),
            emotion: Emotion::Neutral,
            speaker: 0,
            pitch: Pitch::ALL[g.gen_range(0..3)],
            speed: Speed::ALL[g.gen_range(0..3)],
            color_noise: 0.0,
        };
        Ok((render_utterance(&spec, 0)?, false))
    };
    let rep = speed_pitch_study(&random, 100, 2).unwrap();
    assert!(rep.speed.spearman.unwrap().abs() < 0.2, "{:?}", rep.speed);
    assert!(rep.pitch.spearman.unwrap().abs() < 0.2, "{:?}", rep.pitch);
    let dead = |r: &PromptRecord| {
        oracle_generator(r).map(|(mut t, f)| {
            t[2] = crate::synthvoice::vocab::pitch_tok(Pitch::Mid);
            (t, f)
        })
    };
    let rep = speed_pitch_study(&dead, 10, 2).unwrap();
    assert!(rep.pitch.spearman.is_none() && rep.pitch.error.is_some());
}

#[test]
fn benchmark_report_and_ablation_table() {
    let bench = Benchmark::build(10, 9, 5).unwrap();
    let rep = evaluate_benchmark(&oracle_generator, &bench).unwrap();
    assert_eq!(rep.decoupling_average, 1.0);
    assert_eq!(rep.complex_average, 1.0);
    assert_eq!(rep.complex.pass_rate.len(), 3);

    let model = Policy::new(PolicyConfig {
        d_model: 8,
        n_layers: 1,
        ..Default::default()
    })
    .unwrap();
    let data = crate::training::StageData {
        dpo_pairs: &[],
        dpo_held_out: &[],
        s2_prompts: &[],
        s3_prompts: &[],
    };
    let plans = [crate::training::CurriculumPlan::preset("base").unwrap()];
    let cfgs = crate::training::StageConfigs::paper();
    let (table, reports) = run_ablation(&plans, &model, &data, &cfgs, &bench).unwrap();
    assert_eq!(reports[0], evaluate_benchmark(&model, &bench).unwrap());
    let text = table.to_text();
    assert!(text.starts_with("preset"));
    assert_eq!(
        text,
        run_ablation(&plans, &model, &data, &cfgs, &bench)
            .unwrap()
            .0
            .to_text()
    );
    assert_eq!(default_presets().len(), 8);
}
