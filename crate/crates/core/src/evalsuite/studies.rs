use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{macro_f1, spearman, Generator};
use crate::error::Result;
use crate::rng;
use crate::synthvoice::vocab::N_TEMPLATES;
use crate::synthvoice::{
    decode_attributes, judge, parse_instruction, random_content, render_instruction,
    render_utterance, requested_emotion, requested_pitch, requested_speed, text_phonemes,
    text_tokens, Emotion, Intent, JudgeConfig, Pitch, PromptRecord, RecordMeta, Speed, TokenSeq,
    UtteranceSpec, MAX_CONTENT, MIN_CONTENT,
};

/// Renders exactly what the instruction asks for (neutral, mid, normal when
/// unspecified) with the text's phonemes and speaker 0. Ignores references.
pub fn oracle_generator(record: &PromptRecord) -> Result<(TokenSeq, bool)> {
    let intents = parse_instruction(&record.instruction_tokens);
    let spec = UtteranceSpec {
        content: text_phonemes(&record.text_tokens),
        emotion: requested_emotion(&intents).unwrap_or(Emotion::Neutral),
        speaker: record.meta.speaker.unwrap_or(0),
        pitch: requested_pitch(&intents).unwrap_or(Pitch::Mid),
        speed: requested_speed(&intents).unwrap_or(Speed::Normal),
        color_noise: 0.0,
    };
    Ok((render_utterance(&spec, 0)?, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeResult {
    /// `None` when the correlation is undefined (e.g. a dead control).
    pub spearman: Option<f64>,
    pub error: Option<String>,
    pub n_pairs: usize,
    pub n_missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPitchReport {
    pub n_texts: usize,
    pub speed: AttributeResult,
    pub pitch: AttributeResult,
    pub convention: String,
    /// Full-scale values reported for context only.
    pub reference_values: BTreeMap<String, f64>,
}

fn attribute(levels: Vec<f64>, values: Vec<Option<f64>>) -> AttributeResult {
    let n_missing = values.iter().filter(|v| v.is_none()).count();
    let (l, v): (Vec<f64>, Vec<f64>) = levels
        .into_iter()
        .zip(values)
        .filter_map(|(l, v)| v.map(|v| (l, v)))
        .unzip();
    let n_pairs = l.len();
    match spearman(&l, &v) {
        Ok(r) => AttributeResult {
            spearman: Some(r),
            error: None,
            n_pairs,
            n_missing,
        },
        Err(e) => AttributeResult {
            spearman: None,
            error: Some(e.to_string()),
            n_pairs,
            n_missing,
        },
    }
}

/// Decodes every text under the three levels of each attribute and rank
/// correlates level with the measured value, pooled over texts.
pub fn speed_pitch_study(
    gen: &(impl Generator + ?Sized),
    n_texts: usize,
    seed: u64,
) -> Result<SpeedPitchReport> {
    let texts: Vec<(Vec<usize>, usize)> = (0..n_texts)
        .map(|i| {
            let r = &mut rng::rng(seed, &[0x5b17, i as u64]);
            (
                random_content(r, MIN_CONTENT, MAX_CONTENT),
                r.gen_range(0..N_TEMPLATES),
            )
        })
        .collect();
    let record = |content: &[usize], template: usize, intent: Intent| -> Result<PromptRecord> {
        Ok(PromptRecord {
            instruction_tokens: render_instruction(
                &[Intent::Emotion(Emotion::Neutral), intent],
                template,
            )?,
            text_tokens: text_tokens(content, Emotion::Neutral),
            reference_tokens: None,
            target_tokens: None,
            meta: RecordMeta {
                source: "study".into(),
                content: content.to_vec(),
                template,
                ..Default::default()
            },
        })
    };
    let mut jobs = Vec::with_capacity(6 * n_texts);
    for (content, template) in &texts {
        for (lvl, s) in [Speed::Slow, Speed::Normal, Speed::Fast]
            .into_iter()
            .enumerate()
        {
            jobs.push((
                false,
                lvl as f64 + 1.0,
                record(content, *template, Intent::Speed(s))?,
            ));
        }
        for p in Pitch::ALL {
            jobs.push((
                true,
                p.index() as f64 + 1.0,
                record(content, *template, Intent::Pitch(p))?,
            ));
        }
    }
    let measured: Vec<(bool, f64, Option<f64>)> = jobs
        .par_iter()
        .map(|(is_pitch, lvl, rec)| {
            let (tokens, truncated) = gen.generate(rec)?;
            let d = decode_attributes(&tokens);
            let v = if truncated {
                None
            } else if *is_pitch {
                d.pitch.map(|p| p.index() as f64 + 1.0)
            } else {
                (!d.phonemes.is_empty()).then_some(-d.mean_duration)
            };
            Ok((*is_pitch, *lvl, v))
        })
        .collect::<Result<_>>()?;
    let split = |want: bool| {
        let (l, v): (Vec<f64>, Vec<Option<f64>>) = measured
            .iter()
            .filter(|m| m.0 == want)
            .map(|m| (m.1, m.2))
            .unzip();
        attribute(l, v)
    };
    Ok(SpeedPitchReport {
        n_texts,
        speed: split(false),
        pitch: split(true),
        convention: "speed levels slow=1 normal=2 fast=3 against negated mean duration; pitch low=1 mid=2 high=3 \
                     against the decoded pitch marker"
            .into(),
        reference_values: BTreeMap::from([("speed_en".into(), 0.86), ("pitch_en".into(), 0.91)]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeAgreementReport {
    pub n: usize,
    pub overall: f64,
    pub by_config: BTreeMap<String, f64>,
    pub gold_pass_rate: f64,
    /// Full-scale agreement reported for context only.
    pub reference_value: f64,
}

/// Decodes each prompt once and compares gold and surrogate verdicts.
pub fn judge_agreement_study(
    gen: &(impl Generator + ?Sized),
    prompts: &[PromptRecord],
    gold: &JudgeConfig,
    surrogate: &JudgeConfig,
) -> Result<JudgeAgreementReport> {
    let rows: Vec<(String, u8, u8)> = prompts
        .par_iter()
        .map(|r| {
            let (tokens, _) = gen.generate(r)?;
            let g = judge(&tokens, &r.instruction_tokens, &r.text_tokens, gold);
            let s = judge(&tokens, &r.instruction_tokens, &r.text_tokens, surrogate);
            Ok((r.meta.config.clone().unwrap_or_else(|| "all".into()), g, s))
        })
        .collect::<Result<_>>()?;
    let (g, s): (Vec<u8>, Vec<u8>) = rows.iter().map(|r| (r.1, r.2)).unzip();
    let mut buckets: BTreeMap<String, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for (c, a, b) in &rows {
        let e = buckets.entry(c.clone()).or_default();
        e.0.push(*a);
        e.1.push(*b);
    }
    let by_config = buckets
        .into_iter()
        .map(|(k, (a, b))| Ok((k, macro_f1(&a, &b)?)))
        .collect::<Result<_>>()?;
    Ok(JudgeAgreementReport {
        n: rows.len(),
        overall: macro_f1(&g, &s)?,
        by_config,
        gold_pass_rate: g.iter().map(|&v| v as f64).sum::<f64>() / g.len().max(1) as f64,
        reference_value: 0.62,
    })
}
