//! Token id layout and the categorical attributes it encodes.

use serde::{Deserialize, Serialize};

pub type TokenSeq = Vec<u32>;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const N_SPEAKERS: usize = 8;
pub const N_PHONEMES: usize = 24;
pub const N_EMOTIONS: usize = 5;
pub const N_TEMPLATES: usize = 10;
pub const INS_EMO: u32 = 164;
pub const INS_PITCH: u32 = 165;
pub const INS_SPD: u32 = 166;
pub const INS_NONE: u32 = 167;
pub const USED_TOKENS: usize = 189;
pub const VOCAB_SIZE: usize = 192;

const SPK0: u32 = 4;
const PITCH0: u32 = 12;
const PH0: u32 = 15;
const TXT0: u32 = 135;
const TXTEMO0: u32 = 159;
const LBL_EMO0: u32 = 168;
const LBL_PITCH0: u32 = 173;
const LBL_SPD0: u32 = 176;
const TPL0: u32 = 179;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Angry,
    Sad,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; N_EMOTIONS] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Angry,
        Emotion::Sad,
        Emotion::Surprised,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pitch {
    Low,
    Mid,
    High,
}

impl Pitch {
    pub const ALL: [Pitch; 3] = [Pitch::Low, Pitch::Mid, Pitch::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Fast,
    Normal,
    Slow,
}

impl Speed {
    pub const ALL: [Speed; 3] = [Speed::Fast, Speed::Normal, Speed::Slow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Repeats per phoneme: 1, 2, 3 for fast, normal, slow.
    pub fn duration(self) -> usize {
        self as usize + 1
    }
}

pub fn spk(s: usize) -> u32 {
    SPK0 + s as u32
}

pub fn pitch_tok(p: Pitch) -> u32 {
    PITCH0 + p as u32
}

pub fn ph(p: usize, e: Emotion) -> u32 {
    PH0 + 5 * p as u32 + e as u32
}

pub fn txt(p: usize) -> u32 {
    TXT0 + p as u32
}

pub fn txt_emo(e: Emotion) -> u32 {
    TXTEMO0 + e as u32
}

pub fn lbl_emo(e: Emotion) -> u32 {
    LBL_EMO0 + e as u32
}

pub fn lbl_pitch(p: Pitch) -> u32 {
    LBL_PITCH0 + p as u32
}

pub fn lbl_spd(v: Speed) -> u32 {
    LBL_SPD0 + v as u32
}

pub fn tpl(k: usize) -> u32 {
    TPL0 + k as u32
}

pub fn as_speaker(id: u32) -> Option<usize> {
    (SPK0..SPK0 + N_SPEAKERS as u32)
        .contains(&id)
        .then(|| (id - SPK0) as usize)
}

pub fn as_pitch(id: u32) -> Option<Pitch> {
    (PITCH0..PITCH0 + 3)
        .contains(&id)
        .then(|| Pitch::ALL[(id - PITCH0) as usize])
}

/// Splits a colored phoneme token into (phoneme, emotion).
pub fn as_ph(id: u32) -> Option<(usize, Emotion)> {
    (PH0..TXT0).contains(&id).then(|| {
        (
            ((id - PH0) / 5) as usize,
            Emotion::ALL[((id - PH0) % 5) as usize],
        )
    })
}

pub fn as_txt(id: u32) -> Option<usize> {
    (TXT0..TXTEMO0).contains(&id).then(|| (id - TXT0) as usize)
}

pub fn as_txt_emo(id: u32) -> Option<Emotion> {
    (TXTEMO0..INS_EMO)
        .contains(&id)
        .then(|| Emotion::ALL[(id - TXTEMO0) as usize])
}
