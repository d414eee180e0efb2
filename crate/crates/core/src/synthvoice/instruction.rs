use serde::{Deserialize, Serialize};

use super::vocab::*;
use crate::error::{contract, Result};

/// One requested attribute and its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "attribute", content = "label", rename_all = "lowercase")]
pub enum Intent {
    Emotion(Emotion),
    Pitch(Pitch),
    Speed(Speed),
}

impl Intent {
    fn slot(self) -> usize {
        match self {
            Intent::Emotion(_) => 0,
            Intent::Pitch(_) => 1,
            Intent::Speed(_) => 2,
        }
    }

    fn tokens(self) -> [u32; 2] {
        match self {
            Intent::Emotion(e) => [INS_EMO, lbl_emo(e)],
            Intent::Pitch(p) => [INS_PITCH, lbl_pitch(p)],
            Intent::Speed(v) => [INS_SPD, lbl_spd(v)],
        }
    }
}

/// `[TPL_k] ([INS_attr][LBL])…`; an empty intent list gives the default
/// "speak the following text" instruction `[TPL_k, INS_NONE]`.
pub fn render_instruction(intents: &[Intent], template: usize) -> Result<TokenSeq> {
    if template >= N_TEMPLATES {
        return Err(contract(format!("template {template} out of range")));
    }
    if intents.len() > 3 {
        return Err(contract("at most three attributes per instruction"));
    }
    let mut seen = [false; 3];
    let mut out = vec![tpl(template)];
    if intents.is_empty() {
        out.push(INS_NONE);
    }
    for it in intents {
        if std::mem::replace(&mut seen[it.slot()], true) {
            return Err(contract("duplicate attribute in instruction"));
        }
        out.extend(it.tokens());
    }
    Ok(out)
}

/// Inverse of [`render_instruction`]; malformed pairs are skipped.
pub fn parse_instruction(tokens: &[u32]) -> Vec<Intent> {
    let mut out = Vec::new();
    for w in tokens.windows(2) {
        let lbl = w[1];
        let it = match w[0] {
            INS_EMO => (168..173)
                .contains(&lbl)
                .then(|| Intent::Emotion(Emotion::ALL[(lbl - 168) as usize])),
            INS_PITCH => (173..176)
                .contains(&lbl)
                .then(|| Intent::Pitch(Pitch::ALL[(lbl - 173) as usize])),
            INS_SPD => (176..179)
                .contains(&lbl)
                .then(|| Intent::Speed(Speed::ALL[(lbl - 176) as usize])),
            _ => None,
        };
        out.extend(it);
    }
    out
}

pub fn requested_emotion(intents: &[Intent]) -> Option<Emotion> {
    intents.iter().find_map(|i| match i {
        Intent::Emotion(e) => Some(*e),
        _ => None,
    })
}

pub fn requested_pitch(intents: &[Intent]) -> Option<Pitch> {
    intents.iter().find_map(|i| match i {
        Intent::Pitch(p) => Some(*p),
        _ => None,
    })
}

pub fn requested_speed(intents: &[Intent]) -> Option<Speed> {
    intents.iter().find_map(|i| match i {
        Intent::Speed(v) => Some(*v),
        _ => None,
    })
}
