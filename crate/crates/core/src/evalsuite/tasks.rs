use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synthvoice::vocab::{N_EMOTIONS, N_SPEAKERS, N_TEMPLATES};
use crate::synthvoice::{
    make_s3_prompts, other_emotion, random_content, read_jsonl, render_instruction,
    render_reference, text_tokens, write_jsonl, Emotion, Intent, PromptRecord, RecordMeta,
    MAX_CONTENT, MIN_CONTENT,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    /// Text only: the text word may pull against the instruction.
    TO,
    /// Text plus reference: the reference style may pull against it.
    TR,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// `TO-easy`, `TR-hard`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKind {
    pub task_type: TaskType,
    pub difficulty: Difficulty,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind {
            task_type: TaskType::TO,
            difficulty: Difficulty::Easy,
        },
        TaskKind {
            task_type: TaskType::TO,
            difficulty: Difficulty::Hard,
        },
        TaskKind {
            task_type: TaskType::TR,
            difficulty: Difficulty::Easy,
        },
        TaskKind {
            task_type: TaskType::TR,
            difficulty: Difficulty::Hard,
        },
    ];

    pub fn new(task_type: TaskType, difficulty: Difficulty) -> Self {
        Self {
            task_type,
            difficulty,
        }
    }

    pub fn is_hard(self) -> bool {
        self.difficulty == Difficulty::Hard
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.task_type {
            TaskType::TO => "TO",
            TaskType::TR => "TR",
        };
        let d = match self.difficulty {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        };
        write!(f, "{t}-{d}")
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub kind: TaskKind,
    pub records: Vec<PromptRecord>,
    pub warnings: Vec<String>,
}

/// Emotion-balanced decoupling task. Instructions name only an emotion.
/// Easy variants use neutral text words (TO) or neutral references (TR);
/// hard variants make the text word (TO) or the reference (TR, never
/// neutral) disagree with the instruction. TR text words are neutral.
pub fn build_eval_set(kind: TaskKind, n: usize, seed: u64) -> Result<EvalTask> {
    let per_class = n / N_EMOTIONS;
    if per_class == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least {N_EMOTIONS} records, got {n}"
        )));
    }
    let mut warnings = Vec::new();
    if n % N_EMOTIONS != 0 {
        warnings.push(format!(
            "n={n} not divisible by {N_EMOTIONS}; rounded down to {}",
            per_class * N_EMOTIONS
        ));
    }
    let tag = 0xe7a1
        + TaskKind::ALL
            .iter()
            .position(|k| *k == kind)
            .expect("listed") as u64;
    let records = (0..per_class * N_EMOTIONS)
        .map(|i| {
            let r = &mut rng::rng(seed, &[tag, i as u64]);
            let emotion = Emotion::ALL[i % N_EMOTIONS];
            let content = random_content(r, MIN_CONTENT, MAX_CONTENT);
            let template = r.gen_range(0..N_TEMPLATES);
            let speaker = r.gen_range(0..N_SPEAKERS);
            let (text_emotion, ref_emotion) = match (kind.task_type, kind.difficulty) {
                (TaskType::TO, Difficulty::Easy) => (Emotion::Neutral, None),
                (TaskType::TO, Difficulty::Hard) => (other_emotion(r, &[emotion]), None),
                (TaskType::TR, Difficulty::Easy) => (Emotion::Neutral, Some(Emotion::Neutral)),
                (TaskType::TR, Difficulty::Hard) => (
                    Emotion::Neutral,
                    Some(other_emotion(r, &[emotion, Emotion::Neutral])),
                ),
            };
            Ok(PromptRecord {
                instruction_tokens: render_instruction(&[Intent::Emotion(emotion)], template)?,
                text_tokens: text_tokens(&content, text_emotion),
                reference_tokens: ref_emotion.map(|e| render_reference(r, speaker, e)),
                target_tokens: None,
                meta: RecordMeta {
                    source: "eval".into(),
                    config: Some(kind.to_string()),
                    emotion: Some(emotion),
                    text_emotion: Some(text_emotion),
                    ref_emotion,
                    speaker: ref_emotion.map(|_| speaker),
                    content,
                    template,
                    ..Default::default()
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTask {
        kind,
        records,
        warnings,
    })
}

impl EvalTask {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    /// Reads a task file; the kind is recovered from the records.
    pub fn read(path: &Path) -> Result<Self> {
        let records: Vec<PromptRecord> = read_jsonl(path)?;
        let kind = records
            .first()
            .and_then(|r| r.meta.config.as_deref())
            .ok_or_else(|| Error::InvalidInput("task file has no tagged records".into()))?
            .parse()?;
        Ok(Self {
            kind,
            records,
            warnings: Vec::new(),
        })
    }
}

/// Held-out complex-instruction prompts: the instruction-stage generator's
/// full/compound/single configurations, no references.
pub fn build_complex_set(n: usize, seed: u64) -> Result<Vec<PromptRecord>> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "need at least one complex prompt".into(),
        ));
    }
    make_s3_prompts(0, n, rng::derive(seed, &[0xc0e1]))
}
