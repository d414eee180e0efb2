use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracles::ser_distribution;
use super::vocab::*;
use crate::error::{contract, Result};
use crate::rng;

pub const MIN_CONTENT: usize = 4;
pub const MAX_CONTENT: usize = 16;

/// Latent factors of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSpec {
    pub content: Vec<usize>,
    pub emotion: Emotion,
    pub speaker: usize,
    pub pitch: Pitch,
    pub speed: Speed,
    pub color_noise: f64,
}

impl UtteranceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_CONTENT).contains(&self.content.len()) {
            return Err(contract(format!(
                "content length {} outside 1..={MAX_CONTENT}",
                self.content.len()
            )));
        }
        if self.content.iter().any(|&p| p >= N_PHONEMES) {
            return Err(contract("phoneme id out of range"));
        }
        // Adjacent repeats cannot be told apart from a longer duration.
        if self.content.windows(2).any(|w| w[0] == w[1]) {
            return Err(contract("adjacent repeated phonemes are not recoverable"));
        }
        if self.speaker >= N_SPEAKERS {
            return Err(contract("speaker out of range"));
        }
        if !(0.0..1.0).contains(&self.color_noise) {
            return Err(contract("color_noise must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// `[BOS, SPK, PITCH, PH×d …, EOS]`; each PH token is independently recolored
/// to a random other emotion with probability `color_noise`.
pub fn render_utterance(spec: &UtteranceSpec, seed: u64) -> Result<TokenSeq> {
    spec.validate()?;
    let mut r = rng::rng(seed, &[0x7e4d]);
    let d = spec.speed.duration();
    let mut out = Vec::with_capacity(4 + d * spec.content.len());
    out.extend([BOS, spk(spec.speaker), pitch_tok(spec.pitch)]);
    for &p in &spec.content {
        for _ in 0..d {
            let mut e = spec.emotion;
            if spec.color_noise > 0.0 && r.gen::<f64>() < spec.color_noise {
                let k = r.gen_range(0..N_EMOTIONS - 1);
                e = Emotion::ALL[if k >= e.index() { k + 1 } else { k }];
            }
            out.push(ph(p, e));
        }
    }
    out.push(EOS);
    Ok(out)
}

/// What the exact readers recover from a token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub speaker: Option<usize>,
    pub pitch: Option<Pitch>,
    pub emotion_dist: [f64; N_EMOTIONS],
    /// PH tokens per collapsed phoneme; 0 when there are none.
    pub mean_duration: f64,
    pub phonemes: Vec<usize>,
    pub ph_tokens: usize,
}

impl Decoded {
    pub fn emotion_argmax(&self) -> Emotion {
        argmax_emotion(&self.emotion_dist)
    }
}

/// Lowest index wins ties.
pub fn argmax_emotion(dist: &[f64; N_EMOTIONS]) -> Emotion {
    let mut best = 0;
    for i in 1..N_EMOTIONS {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    Emotion::ALL[best]
}

/// Phonemes with coloring stripped and consecutive repeats merged.
pub fn collapse(seq: &[u32]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for p in seq.iter().filter_map(|&t| as_ph(t)).map(|(p, _)| p) {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

pub fn decode_attributes(seq: &[u32]) -> Decoded {
    let phonemes = collapse(seq);
    let ph_tokens = seq.iter().filter(|&&t| as_ph(t).is_some()).count();
    let mean_duration = if phonemes.is_empty() {
        0.0
    } else {
        ph_tokens as f64 / phonemes.len() as f64
    };
    Decoded {
        speaker: seq.iter().find_map(|&t| as_speaker(t)),
        pitch: seq.iter().find_map(|&t| as_pitch(t)),
        emotion_dist: ser_distribution(seq),
        mean_duration,
        phonemes,
        ph_tokens,
    }
}
