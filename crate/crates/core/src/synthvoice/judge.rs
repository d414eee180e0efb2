//! Binary instruction-adherence judge with an optional noisy surrogate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::instruction::{parse_instruction, requested_emotion, requested_pitch, requested_speed};
use super::oracles::{content_error, text_phonemes};
use super::render::decode_attributes;
use crate::rng;

/// Flip probabilities `[pass → fail, fail → pass]` for one check.
pub type Flip = [f64; 2];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipNoise {
    pub emotion: Flip,
    pub pitch: Flip,
    pub speed: Flip,
    pub content: Flip,
    /// Symmetric flip of the aggregated verdict.
    pub verdict: f64,
}

impl FlipNoise {
    pub fn is_zero(&self) -> bool {
        *self == FlipNoise::default()
    }

    pub fn symmetric_verdict(p: f64) -> Self {
        Self {
            verdict: p,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub content_threshold: f64,
    pub speed_band: f64,
    pub flip_noise: FlipNoise,
    pub seed: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            content_threshold: 0.2,
            speed_band: 0.4,
            flip_noise: FlipNoise::default(),
            seed: 0,
        }
    }
}

impl JudgeConfig {
    pub fn gold() -> Self {
        Self::default()
    }

    pub fn surrogate(flip_noise: FlipNoise, seed: u64) -> Self {
        Self {
            flip_noise,
            seed,
            ..Self::default()
        }
    }
}

/// Per-check outcomes; `None` marks an attribute that was not requested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub emotion: Option<bool>,
    pub pitch: Option<bool>,
    pub speed: Option<bool>,
    pub content: bool,
}

impl Checks {
    pub fn all_pass(&self) -> bool {
        self.content
            && [self.emotion, self.pitch, self.speed]
                .iter()
                .all(|c| c.unwrap_or(true))
    }
}

/// Thresholded checks of `gen` against the instruction and text.
pub fn gold_checks(gen: &[u32], instruction: &[u32], text: &[u32], cfg: &JudgeConfig) -> Checks {
    let intents = parse_instruction(instruction);
    let d = decode_attributes(gen);
    let target = text_phonemes(text);
    let content = match content_error(gen, &target) {
        Ok(err) => err <= cfg.content_threshold,
        Err(_) => d.phonemes.is_empty(),
    };
    Checks {
        emotion: requested_emotion(&intents).map(|e| d.emotion_argmax() == e),
        pitch: requested_pitch(&intents).map(|p| d.pitch == Some(p)),
        speed: requested_speed(&intents).map(|v| {
            !d.phonemes.is_empty()
                && (d.mean_duration - v.duration() as f64).abs() <= cfg.speed_band
        }),
        content,
    }
}

/// Binary verdict. With zero noise this is the gold judge; otherwise each
/// check is flipped per its matrix, re-aggregated, and the verdict flipped.
/// Noise is a pure function of (seed, instruction, text, generation).
pub fn judge(gen: &[u32], instruction: &[u32], text: &[u32], cfg: &JudgeConfig) -> u8 {
    let mut c = gold_checks(gen, instruction, text, cfg);
    let noise = &cfg.flip_noise;
    if noise.is_zero() {
        return c.all_pass() as u8;
    }
    let mut r = rng::rng(rng::hash_tokens(cfg.seed, &[instruction, text, gen]), &[]);
    let mut flip = |v: bool, f: Flip| {
        let p = if v { f[0] } else { f[1] };
        let u: f64 = r.gen();
        if u < p {
            !v
        } else {
            v
        }
    };
    c.emotion = c.emotion.map(|v| flip(v, noise.emotion));
    c.pitch = c.pitch.map(|v| flip(v, noise.pitch));
    c.speed = c.speed.map(|v| flip(v, noise.speed));
    c.content = flip(c.content, noise.content);
    let verdict = flip(c.all_pass(), [noise.verdict, noise.verdict]);
    verdict as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthvoice::instruction::{render_instruction, Intent};
    use crate::synthvoice::render::{render_utterance, UtteranceSpec};
    use crate::synthvoice::vocab::*;

    fn case(e: Emotion) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        let spec = UtteranceSpec {
            content: vec![1, 5, 9, 2],
            emotion: e,
            speaker: 3,
            pitch: Pitch::High,
            speed: Speed::Slow,
            color_noise: 0.0,
        };
        let gen = render_utterance(&spec, 0).unwrap();
        let ins = render_instruction(
            &[
                Intent::Emotion(Emotion::Angry),
                Intent::Pitch(Pitch::High),
                Intent::Speed(Speed::Slow),
            ],
            2,
        )
        .unwrap();
        let text: Vec<u32> = [1, 5, 9, 2]
            .iter()
            .map(|&p| txt(p))
            .chain([txt_emo(Emotion::Neutral)])
            .collect();
        (gen, ins, text)
    }

    #[test]
    fn perfect_render_passes_and_wrong_emotion_fails() {
        let cfg = JudgeConfig::gold();
        let (gen, ins, text) = case(Emotion::Angry);
        assert_eq!(judge(&gen, &ins, &text, &cfg), 1);
        let (gen, ins, text) = case(Emotion::Sad);
        assert_eq!(judge(&gen, &ins, &text, &cfg), 0);
    }

    #[test]
    fn surrogate_is_deterministic() {
        let cfg = JudgeConfig::surrogate(FlipNoise::symmetric_verdict(0.5), 9);
        let (gen, ins, text) = case(Emotion::Angry);
        let a = judge(&gen, &ins, &text, &cfg);
        assert_eq!(a, judge(&gen, &ins, &text, &cfg));
    }
}
