//! Record types and the seeded dataset builders.
//!
//! Every record is produced from its own sub-seed `derive(seed, [tag, i])`,
//! so builders parallelise per record without changing their output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::instruction::{render_instruction, Intent};
use super::render::{render_utterance, UtteranceSpec, MAX_CONTENT, MIN_CONTENT};
use super::vocab::*;
use crate::error::{Error, Result};
use crate::rng::{self, Rng as StdRng};

/// Reference utterances are kept short to bound prompt length.
pub const MAX_REF_CONTENT: usize = 8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordMeta {
    pub source: String,
    pub config: Option<String>,
    /// Emotion the record is about; the instruction names it when it names
    /// any emotion.
    pub emotion: Option<Emotion>,
    /// Emotion actually rendered in the target, when there is one.
    pub target_emotion: Option<Emotion>,
    pub pitch: Option<Pitch>,
    pub speed: Option<Speed>,
    pub text_emotion: Option<Emotion>,
    pub ref_emotion: Option<Emotion>,
    pub speaker: Option<usize>,
    pub content: Vec<usize>,
    pub template: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instruction_tokens: TokenSeq,
    pub text_tokens: TokenSeq,
    pub reference_tokens: Option<TokenSeq>,
    pub target_tokens: Option<TokenSeq>,
    pub meta: RecordMeta,
}

/// `[BOS] instruction [SEP] text [SEP] (reference [SEP])`.
pub fn assemble_prompt(instruction: &[u32], text: &[u32], reference: Option<&[u32]>) -> TokenSeq {
    let mut p =
        Vec::with_capacity(4 + instruction.len() + text.len() + reference.map_or(0, <[u32]>::len));
    p.push(BOS);
    p.extend_from_slice(instruction);
    p.push(SEP);
    p.extend_from_slice(text);
    p.push(SEP);
    if let Some(r) = reference {
        p.extend_from_slice(r);
        p.push(SEP);
    }
    p
}

impl PromptRecord {
    pub fn prompt(&self) -> TokenSeq {
        assemble_prompt(
            &self.instruction_tokens,
            &self.text_tokens,
            self.reference_tokens.as_deref(),
        )
    }

    pub fn target_phonemes(&self) -> Vec<usize> {
        super::oracles::text_phonemes(&self.text_tokens)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub chosen_emotion: Option<Emotion>,
    pub rejected_emotion: Option<Emotion>,
    pub speaker: usize,
    pub content: Vec<usize>,
}

/// Prompt with a chosen and a rejected completion. `prompt_tokens` holds the
/// reference utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt_tokens: TokenSeq,
    pub target_text_tokens: TokenSeq,
    pub instruction_tokens: TokenSeq,
    pub chosen_tokens: TokenSeq,
    pub rejected_tokens: TokenSeq,
    pub meta: PairMeta,
}

impl PreferenceTriple {
    pub fn prompt(&self) -> TokenSeq {
        assemble_prompt(
            &self.instruction_tokens,
            &self.target_text_tokens,
            Some(&self.prompt_tokens),
        )
    }

    /// Construction invariants: chosen reads as the instructed emotion,
    /// rejected does not, both share content, reference is neutral and from
    /// the chosen speaker.
    pub fn validate(&self) -> std::result::Result<(), String> {
        use super::instruction::{parse_instruction, requested_emotion};
        use super::render::decode_attributes;
        let label = requested_emotion(&parse_instruction(&self.instruction_tokens))
            .ok_or("instruction names no emotion")?;
        let w = decode_attributes(&self.chosen_tokens);
        let l = decode_attributes(&self.rejected_tokens);
        let r = decode_attributes(&self.prompt_tokens);
        if w.emotion_argmax() != label {
            return Err("chosen does not read as the instructed emotion".into());
        }
        if l.emotion_argmax() == label {
            return Err("rejected reads as the instructed emotion".into());
        }
        if w.phonemes != l.phonemes {
            return Err("chosen and rejected differ in content".into());
        }
        if r.emotion_argmax() != Emotion::Neutral || r.speaker != w.speaker {
            return Err("reference is not a neutral sample of the chosen speaker".into());
        }
        if self.chosen_tokens == self.rejected_tokens || self.chosen_tokens.last() != Some(&EOS) {
            return Err("completions must differ and end with EOS".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainKnobs {
    pub p_text_style: f64,
    pub p_ref_style: f64,
    pub p_has_instruction: f64,
    pub p_has_reference: f64,
    /// Chance that an explicit instruction also names the target pitch.
    pub p_instr_pitch: f64,
    /// Chance that an explicit instruction also names the target speed.
    pub p_instr_speed: f64,
    pub color_noise: f64,
}

impl Default for PretrainKnobs {
    fn default() -> Self {
        Self {
            p_text_style: 0.9,
            p_ref_style: 0.9,
            p_has_instruction: 0.5,
            p_has_reference: 0.5,
            p_instr_pitch: 0.5,
            p_instr_speed: 0.5,
            color_noise: 0.0,
        }
    }
}

impl PretrainKnobs {
    pub fn validate(&self) -> Result<()> {
        let ps = [
            self.p_text_style,
            self.p_ref_style,
            self.p_has_instruction,
            self.p_has_reference,
            self.p_instr_pitch,
            self.p_instr_speed,
        ];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || !(0.0..1.0).contains(&self.color_noise) {
            return Err(Error::InvalidInput(
                "pretraining probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

pub fn random_content(r: &mut StdRng, min: usize, max: usize) -> Vec<usize> {
    let n = r.gen_range(min..=max);
    sample(r, N_PHONEMES, n).into_vec()
}

/// Uniform emotion outside `exclude`.
pub fn other_emotion(r: &mut StdRng, exclude: &[Emotion]) -> Emotion {
    let pool: Vec<Emotion> = Emotion::ALL
        .into_iter()
        .filter(|e| !exclude.contains(e))
        .collect();
    pool[r.gen_range(0..pool.len())]
}

pub fn random_pitch(r: &mut StdRng) -> Pitch {
    Pitch::ALL[r.gen_range(0..3)]
}

pub fn random_speed(r: &mut StdRng) -> Speed {
    Speed::ALL[r.gen_range(0..3)]
}

pub fn text_tokens(content: &[usize], word: Emotion) -> TokenSeq {
    content
        .iter()
        .map(|&p| txt(p))
        .chain([txt_emo(word)])
        .collect()
}

/// A short same-speaker utterance with fresh content.
pub fn render_reference(r: &mut StdRng, speaker: usize, emotion: Emotion) -> TokenSeq {
    let spec = UtteranceSpec {
        content: random_content(r, MIN_CONTENT, MAX_REF_CONTENT),
        emotion,
        speaker,
        pitch: random_pitch(r),
        speed: random_speed(r),
        color_noise: 0.0,
    };
    render_utterance(&spec, r.gen()).expect("generated spec is valid")
}

fn build<T: Send>(
    n: usize,
    seed: u64,
    tag: u64,
    f: impl Fn(&mut StdRng, usize) -> T + Sync,
) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut rng::rng(seed, &[tag, i as u64]), i))
        .collect()
}

/// Pretraining corpus. The drawn emotion is named by the instruction (when
/// one is explicit); the text word agrees with it with probability
/// `p_text_style`, and the rendered style follows the text word. A reference,
/// when attached, shares the style with probability `p_ref_style`; otherwise
/// its emotion differs and the rendered style follows the reference.
pub fn make_pretrain_corpus(
    n: usize,
    knobs: &PretrainKnobs,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    knobs.validate()?;
    Ok(build(n, seed, 0x9e7a, |r, _| {
        let content = random_content(r, MIN_CONTENT, MAX_CONTENT);
        let emotion = Emotion::ALL[r.gen_range(0..N_EMOTIONS)];
        let speaker = r.gen_range(0..N_SPEAKERS);
        let (pitch, speed) = (random_pitch(r), random_speed(r));
        let template = r.gen_range(0..N_TEMPLATES);
        let mut intents = Vec::new();
        if r.gen::<f64>() < knobs.p_has_instruction {
            intents.push(Intent::Emotion(emotion));
            if r.gen::<f64>() < knobs.p_instr_pitch {
                intents.push(Intent::Pitch(pitch));
            }
            if r.gen::<f64>() < knobs.p_instr_speed {
                intents.push(Intent::Speed(speed));
            }
        }
        let text_emotion = if r.gen::<f64>() < knobs.p_text_style {
            emotion
        } else {
            other_emotion(r, &[emotion])
        };
        let mut style = text_emotion;
        let mut ref_emotion = None;
        let mut reference = None;
        if r.gen::<f64>() < knobs.p_has_reference {
            let re = if r.gen::<f64>() < knobs.p_ref_style {
                style
            } else {
                other_emotion(r, &[style])
            };
            style = re;
            ref_emotion = Some(re);
            reference = Some(render_reference(r, speaker, re));
        }
        let spec = UtteranceSpec {
            content: content.clone(),
            emotion: style,
            speaker,
            pitch,
            speed,
            color_noise: knobs.color_noise,
        };
        let target = render_utterance(&spec, r.gen()).expect("generated spec is valid");
        PromptRecord {
            instruction_tokens: render_instruction(&intents, template).expect("valid intents"),
            text_tokens: text_tokens(&content, text_emotion),
            reference_tokens: reference,
            target_tokens: Some(target),
            meta: RecordMeta {
                source: "pretrain".into(),
                config: None,
                emotion: Some(emotion),
                target_emotion: Some(style),
                pitch: Some(pitch),
                speed: Some(speed),
                text_emotion: Some(text_emotion),
                ref_emotion,
                speaker: Some(speaker),
                content,
                template,
            },
        }
    }))
}

/// Preference pairs: same speaker and text, chosen in the instructed emotion,
/// rejected in a different one, neutral same-speaker reference.
pub fn make_dpo_pairs(n: usize, seed: u64) -> Result<Vec<PreferenceTriple>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one pair".into()));
    }
    Ok(build(n, seed, 0xd90, |r, _| {
        let content = random_content(r, MIN_CONTENT, MAX_CONTENT);
        let target = Emotion::ALL[r.gen_range(0..N_EMOTIONS)];
        let rejected = other_emotion(r, &[target]);
        let speaker = r.gen_range(0..N_SPEAKERS);
        let (pitch, speed) = (random_pitch(r), random_speed(r));
        let template = r.gen_range(0..N_TEMPLATES);
        let mk = |e| UtteranceSpec {
            content: content.clone(),
            emotion: e,
            speaker,
            pitch,
            speed,
            color_noise: 0.0,
        };
        let chosen = render_utterance(&mk(target), 0).expect("valid");
        let rejected_tokens = render_utterance(&mk(rejected), 0).expect("valid");
        PreferenceTriple {
            prompt_tokens: render_reference(r, speaker, Emotion::Neutral),
            target_text_tokens: text_tokens(&content, Emotion::Neutral),
            instruction_tokens: render_instruction(&[Intent::Emotion(target)], template)
                .expect("valid"),
            chosen_tokens: chosen,
            rejected_tokens,
            meta: PairMeta {
                chosen_emotion: Some(target),
                rejected_emotion: Some(rejected),
                speaker,
                content,
            },
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S2Knobs {
    pub p_conflict_text: f64,
    pub p_emotional_reference: f64,
}

impl Default for S2Knobs {
    fn default() -> Self {
        Self {
            p_conflict_text: 0.5,
            p_emotional_reference: 0.1,
        }
    }
}

/// Decoupling prompts: emotion instruction, aligned or conflicting text word,
/// same-speaker reference that is neutral or carries another emotion.
pub fn make_s2_prompts(n: usize, knobs: &S2Knobs, seed: u64) -> Result<Vec<PromptRecord>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one prompt".into()));
    }
    Ok(build(n, seed, 0x52, |r, _| {
        let content = random_content(r, MIN_CONTENT, MAX_CONTENT);
        let emotion = Emotion::ALL[r.gen_range(0..N_EMOTIONS)];
        let speaker = r.gen_range(0..N_SPEAKERS);
        let template = r.gen_range(0..N_TEMPLATES);
        let text_emotion = if r.gen::<f64>() < knobs.p_conflict_text {
            other_emotion(r, &[emotion])
        } else {
            emotion
        };
        let ref_emotion = if r.gen::<f64>() < knobs.p_emotional_reference {
            other_emotion(r, &[emotion, Emotion::Neutral])
        } else {
            Emotion::Neutral
        };
        PromptRecord {
            instruction_tokens: render_instruction(&[Intent::Emotion(emotion)], template)
                .expect("valid"),
            text_tokens: text_tokens(&content, text_emotion),
            reference_tokens: Some(render_reference(r, speaker, ref_emotion)),
            target_tokens: None,
            meta: RecordMeta {
                source: "s2".into(),
                emotion: Some(emotion),
                text_emotion: Some(text_emotion),
                ref_emotion: Some(ref_emotion),
                speaker: Some(speaker),
                content,
                template,
                ..Default::default()
            },
        }
    }))
}

pub const S3_CONFIGS: [&str; 3] = ["full", "compound", "single"];

fn random_intent(r: &mut StdRng, slot: usize) -> Intent {
    match slot {
        0 => Intent::Emotion(Emotion::ALL[r.gen_range(0..N_EMOTIONS)]),
        1 => Intent::Pitch(random_pitch(r)),
        _ => Intent::Speed(random_speed(r)),
    }
}

/// Instruction prompts without references. The first `n_existing` records
/// carry a single emotion request; the generated ones cycle through full
/// (all three attributes), compound (two, in random order) and single
/// (one random attribute) configurations.
pub fn make_s3_prompts(
    n_existing: usize,
    n_generated: usize,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    Ok(build(n_existing + n_generated, seed, 0x53, |r, i| {
        let content = random_content(r, MIN_CONTENT, MAX_CONTENT);
        let template = r.gen_range(0..N_TEMPLATES);
        let text_emotion = Emotion::ALL[r.gen_range(0..N_EMOTIONS)];
        let (config, intents) = if i < n_existing {
            ("existing", vec![random_intent(r, 0)])
        } else {
            let c = (i - n_existing) % 3;
            let intents = match c {
                0 => (0..3).map(|s| random_intent(r, s)).collect(),
                1 => {
                    let mut slots = sample(r, 3, 2).into_vec();
                    slots.shuffle(r);
                    slots.into_iter().map(|s| random_intent(r, s)).collect()
                }
                _ => {
                    let s = r.gen_range(0..3);
                    vec![random_intent(r, s)]
                }
            };
            (S3_CONFIGS[c], intents)
        };
        s3_record(config, &intents, template, content, text_emotion)
    }))
}

pub fn s3_record(
    config: &str,
    intents: &[Intent],
    template: usize,
    content: Vec<usize>,
    text_emotion: Emotion,
) -> PromptRecord {
    use super::instruction::{requested_emotion, requested_pitch, requested_speed};
    PromptRecord {
        instruction_tokens: render_instruction(intents, template).expect("valid intents"),
        text_tokens: text_tokens(&content, text_emotion),
        reference_tokens: None,
        target_tokens: None,
        meta: RecordMeta {
            source: "s3".into(),
            config: Some(config.into()),
            emotion: requested_emotion(intents),
            pitch: requested_pitch(intents),
            speed: requested_speed(intents),
            text_emotion: Some(text_emotion),
            content,
            template,
            ..Default::default()
        },
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthvoice::render::decode_attributes;

    #[test]
    fn text_style_rate_matches_knob() {
        let recs = make_pretrain_corpus(50_000, &PretrainKnobs::default(), 3).unwrap();
        let agree = recs
            .iter()
            .filter(|r| r.meta.text_emotion == r.meta.emotion)
            .count();
        let f = agree as f64 / recs.len() as f64;
        assert!((f - 0.9).abs() < 0.01, "{f}");
    }

    #[test]
    fn instruction_only_knobs() {
        let knobs = PretrainKnobs {
            p_text_style: 0.0,
            p_ref_style: 0.0,
            p_has_instruction: 1.0,
            p_has_reference: 0.0,
            ..Default::default()
        };
        for r in make_pretrain_corpus(500, &knobs, 1).unwrap() {
            assert!(r.reference_tokens.is_none());
            assert_eq!(r.instruction_tokens[1], INS_EMO);
            assert_eq!(r.instruction_tokens[2], lbl_emo(r.meta.emotion.unwrap()));
        }
    }

    #[test]
    fn pretrain_targets_follow_text_then_reference() {
        for r in make_pretrain_corpus(2_000, &PretrainKnobs::default(), 5).unwrap() {
            let d = decode_attributes(r.target_tokens.as_ref().unwrap());
            let want = r.meta.ref_emotion.or(r.meta.text_emotion).unwrap();
            assert_eq!(d.emotion_argmax(), want);
            assert_eq!(d.phonemes, r.meta.content);
            if let Some(re) = &r.reference_tokens {
                assert_eq!(decode_attributes(re).speaker, d.speaker);
            }
        }
    }

    #[test]
    fn jsonl_round_trip_and_determinism() {
        let recs = make_pretrain_corpus(200, &PretrainKnobs::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_jsonl(&path, &recs).unwrap();
        let back: Vec<PromptRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, recs);
        let again = make_pretrain_corpus(200, &PretrainKnobs::default(), 9).unwrap();
        assert_eq!(to_jsonl(&recs).unwrap(), to_jsonl(&again).unwrap());
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            to_jsonl(&recs).unwrap()
        );
    }

    #[test]
    fn pairs_satisfy_construction_invariants() {
        for t in make_dpo_pairs(1_000, 4).unwrap() {
            t.validate().unwrap();
        }
    }

    #[test]
    fn s2_fractions() {
        let recs = make_s2_prompts(20_000, &S2Knobs::default(), 6).unwrap();
        let n = recs.len() as f64;
        let emo = recs
            .iter()
            .filter(|r| r.meta.ref_emotion != Some(Emotion::Neutral))
            .count() as f64
            / n;
        let conflict = recs
            .iter()
            .filter(|r| r.meta.text_emotion != r.meta.emotion)
            .count() as f64
            / n;
        assert!((emo - 0.10).abs() < 0.01, "{emo}");
        assert!((conflict - 0.50).abs() < 0.02, "{conflict}");
        assert!(recs.iter().all(|r| r.reference_tokens.is_some()));
        for r in &recs {
            assert_ne!(
                r.meta.ref_emotion,
                r.meta.emotion.filter(|&e| e != Emotion::Neutral)
            );
        }
    }

    #[test]
    fn s3_layout() {
        let recs = make_s3_prompts(1_000, 6_000, 2).unwrap();
        assert_eq!(recs.len(), 7_000);
        assert!(recs.iter().all(|r| r.reference_tokens.is_none()));
        for r in &recs {
            let ins = r
                .instruction_tokens
                .iter()
                .filter(|&&t| (INS_EMO..=INS_SPD).contains(&t))
                .count();
            let want = match r.meta.config.as_deref() {
                Some("full") => 3,
                Some("compound") => 2,
                _ => 1,
            };
            assert_eq!(ins, want);
        }
        let per = |c: &str| {
            recs.iter()
                .filter(|r| r.meta.config.as_deref() == Some(c))
                .count()
        };
        assert_eq!(
            (per("existing"), per("full"), per("compound"), per("single")),
            (1000, 2000, 2000, 2000)
        );
    }
}
