//! Exact reward and evaluation readers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::render::decode_attributes;
use super::vocab::*;
use crate::error::{Error, Result};

pub const ORACLE_VERSION: &str = "oracle-v1";

/// Laplace-smoothed emotion votes over PH tokens: `(n_e + 1) / (N + 5)`.
pub fn ser_distribution(seq: &[u32]) -> [f64; N_EMOTIONS] {
    let mut counts = [0usize; N_EMOTIONS];
    for (_, e) in seq.iter().filter_map(|&t| as_ph(t)) {
        counts[e.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    counts.map(|c| (c as f64 + 1.0) / (n as f64 + N_EMOTIONS as f64))
}

/// Emotion distribution and the reward for `target`.
pub fn ser_oracle(seq: &[u32], target: Emotion) -> ([f64; N_EMOTIONS], f64) {
    let d = ser_distribution(seq);
    (d, d[target.index()])
}

fn speakers(seq: &[u32]) -> Vec<usize> {
    seq.iter().filter_map(|&t| as_speaker(t)).collect()
}

/// 1 iff `gen` carries exactly one speaker marker and it equals the
/// reference's.
pub fn sv_oracle(gen: &[u32], reference: &[u32]) -> Result<u8> {
    let r = speakers(reference);
    if r.len() != 1 {
        return Err(Error::OracleInput(format!(
            "reference has {} speaker markers, expected 1",
            r.len()
        )));
    }
    let g = speakers(gen);
    Ok((g.len() == 1 && g[0] == r[0]) as u8)
}

/// `[speaker one-hot ⊕ emotion distribution ⊕ pitch one-hot]`.
pub fn similarity_embedding(seq: &[u32]) -> [f64; N_SPEAKERS + N_EMOTIONS + 3] {
    let d = decode_attributes(seq);
    let mut v = [0.0; N_SPEAKERS + N_EMOTIONS + 3];
    if let Some(s) = d.speaker {
        v[s] = 1.0;
    }
    v[N_SPEAKERS..N_SPEAKERS + N_EMOTIONS].copy_from_slice(&d.emotion_dist);
    if let Some(p) = d.pitch {
        v[N_SPEAKERS + N_EMOTIONS + p.index()] = 1.0;
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine of the similarity embeddings. The embedding mixes style into the
/// speaker identity on purpose.
pub fn speaker_similarity(gen: &[u32], reference: &[u32]) -> f64 {
    if gen == reference {
        return 1.0;
    }
    cosine(&similarity_embedding(gen), &similarity_embedding(reference))
}

/// Cosine between smoothed emotion distributions.
pub fn emotion_similarity(a: &[u32], b: &[u32]) -> f64 {
    if a == b {
        return 1.0;
    }
    cosine(&ser_distribution(a), &ser_distribution(b))
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + (x != y) as usize;
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Phoneme ids named by the TXT tokens of a text segment.
pub fn text_phonemes(text: &[u32]) -> Vec<usize> {
    text.iter().filter_map(|&t| as_txt(t)).collect()
}

/// Normalised edit distance between decoded phonemes and `target`, in [0, 1].
pub fn content_error(gen: &[u32], target: &[usize]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::OracleInput("empty target text".into()));
    }
    let got = decode_attributes(gen).phonemes;
    Ok((levenshtein(&got, target) as f64 / target.len() as f64).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ser,
    Sv,
    Sim,
    Llm,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Ser => "ser",
            Objective::Sv => "sv",
            Objective::Sim => "sim",
            Objective::Llm => "llm",
        }
    }
}

/// Named rewards of one completion, tagged with the oracle version.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: BTreeMap<Objective, f64>,
    pub oracle_version: String,
}

impl RewardVector {
    pub fn new() -> Self {
        Self {
            values: BTreeMap::new(),
            oracle_version: ORACLE_VERSION.to_string(),
        }
    }

    pub fn with(mut self, o: Objective, v: f64) -> Self {
        self.values.insert(o, v);
        self
    }

    pub fn get(&self, o: Objective) -> Option<f64> {
        self.values.get(&o).copied()
    }
}
