use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tasks::{EvalTask, TaskKind, TaskType};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::synthvoice::{
    content_error, decode_attributes, emotion_similarity, judge, render_utterance, sv_oracle,
    text_phonemes, JudgeConfig, Pitch, PromptRecord, Speed, TokenSeq, UtteranceSpec,
    ORACLE_VERSION,
};

/// Greedy decode budget used by every evaluation.
pub const EVAL_MAX_NEW: usize = 96;

/// A decoder under evaluation: prompt record → (completion, truncated).
pub trait Generator: Sync {
    fn generate(&self, record: &PromptRecord) -> Result<(TokenSeq, bool)>;
}

impl Generator for Policy {
    fn generate(&self, record: &PromptRecord) -> Result<(TokenSeq, bool)> {
        let s = self.greedy(&record.prompt(), EVAL_MAX_NEW)?;
        Ok((s.tokens, s.truncated))
    }
}

impl<F: Fn(&PromptRecord) -> Result<(TokenSeq, bool)> + Sync> Generator for F {
    fn generate(&self, record: &PromptRecord) -> Result<(TokenSeq, bool)> {
        self(record)
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation with average ranks for ties.
pub fn spearman(levels: &[f64], values: &[f64]) -> Result<f64> {
    if levels.len() != values.len() || levels.len() < 3 {
        return Err(Error::InvalidInput(
            "spearman needs two equal-length lists of at least 3".into(),
        ));
    }
    let (a, b) = (average_ranks(levels), average_ranks(values));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            if saa == 0.0 {
                "constant levels"
            } else {
                "constant measurements"
            }
            .into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Unweighted mean of per-class F1 over {0, 1}, `reference` as truth. A class
/// absent from both lists is skipped; absent from the reference only, it
/// scores 0.
pub fn macro_f1(reference: &[u8], predicted: &[u8]) -> Result<f64> {
    if reference.len() != predicted.len() || reference.is_empty() {
        return Err(Error::InvalidInput(
            "macro_f1 needs two equal-length non-empty lists".into(),
        ));
    }
    let mut f1s = Vec::with_capacity(2);
    for c in [0u8, 1] {
        let tp = reference
            .iter()
            .zip(predicted)
            .filter(|&(&a, &b)| a == c && b == c)
            .count() as f64;
        let in_ref = reference.iter().filter(|&&a| a == c).count() as f64;
        let in_pred = predicted.iter().filter(|&&b| b == c).count() as f64;
        if in_ref == 0.0 && in_pred == 0.0 {
            continue;
        }
        f1s.push(2.0 * tp / (in_ref + in_pred));
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub n: usize,
    pub n_scored: usize,
    pub n_truncated: usize,
    pub acc_i: f64,
    /// Agreement with the conflicting text word; TO-hard only.
    pub acc_t: Option<f64>,
    /// Agreement with the conflicting reference style; TR-hard only.
    pub acc_r: Option<f64>,
    pub e_sim: f64,
    pub sv_rate: Option<f64>,
    pub content_error_mean: f64,
    pub oracle_version: String,
    pub warnings: Vec<String>,
}

struct RecordScore {
    truncated: bool,
    hit_i: bool,
    hit_t: bool,
    hit_r: bool,
    e_sim: f64,
    sv: u8,
    content_error: f64,
}

fn score_record(
    gen: &(impl Generator + ?Sized),
    kind: TaskKind,
    rec: &PromptRecord,
) -> Result<RecordScore> {
    let (tokens, truncated) = gen.generate(rec)?;
    let want = rec
        .meta
        .emotion
        .ok_or_else(|| Error::InvalidInput("eval record without emotion".into()))?;
    let got = decode_attributes(&tokens).emotion_argmax();
    let ideal = render_utterance(
        &UtteranceSpec {
            content: rec.meta.content.clone(),
            emotion: want,
            speaker: rec.meta.speaker.unwrap_or(0),
            pitch: Pitch::Mid,
            speed: Speed::Normal,
            color_noise: 0.0,
        },
        0,
    )?;
    let sv = match (&rec.reference_tokens, kind.task_type) {
        (Some(r), TaskType::TR) => sv_oracle(&tokens, r)?,
        _ => 0,
    };
    Ok(RecordScore {
        truncated,
        hit_i: got == want,
        hit_t: rec.meta.text_emotion == Some(got),
        hit_r: rec.meta.ref_emotion == Some(got),
        e_sim: emotion_similarity(&tokens, &ideal),
        sv,
        content_error: if truncated {
            1.0
        } else {
            content_error(&tokens, &text_phonemes(&rec.text_tokens))?
        },
    })
}

/// Greedy decode of every record, scored by the exact oracles. Truncated
/// decodes count as full content error and are left out of the emotion
/// metrics.
pub fn evaluate(gen: &(impl Generator + ?Sized), task: &EvalTask) -> Result<EvalReport> {
    let kind = task.kind;
    let scores: Vec<RecordScore> = task
        .records
        .par_iter()
        .map(|r| score_record(gen, kind, r))
        .collect::<Result<_>>()?;
    let n = scores.len();
    let scored: Vec<&RecordScore> = scores.iter().filter(|s| !s.truncated).collect();
    let m = scored.len().max(1) as f64;
    let frac = |f: &dyn Fn(&RecordScore) -> bool| scored.iter().filter(|s| f(s)).count() as f64 / m;
    let hard = kind.is_hard();
    Ok(EvalReport {
        task: kind,
        n,
        n_scored: scored.len(),
        n_truncated: n - scored.len(),
        acc_i: frac(&|s| s.hit_i),
        acc_t: (hard && kind.task_type == TaskType::TO).then(|| frac(&|s| s.hit_t)),
        acc_r: (hard && kind.task_type == TaskType::TR).then(|| frac(&|s| s.hit_r)),
        e_sim: scored.iter().map(|s| s.e_sim).sum::<f64>() / m,
        sv_rate: (kind.task_type == TaskType::TR).then(|| frac(&|s| s.sv == 1)),
        content_error_mean: scores.iter().map(|s| s.content_error).sum::<f64>() / n.max(1) as f64,
        oracle_version: ORACLE_VERSION.into(),
        warnings: task.warnings.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexReport {
    pub n: usize,
    /// Gold-judge pass rate per instruction configuration.
    pub pass_rate: BTreeMap<String, f64>,
    pub average: f64,
}

/// Gold-judge pass rates on complex-instruction prompts; the average is
/// taken over configurations.
pub fn evaluate_complex(
    gen: &(impl Generator + ?Sized),
    records: &[PromptRecord],
) -> Result<ComplexReport> {
    let gold = JudgeConfig::gold();
    let verdicts: Vec<(String, u8)> = records
        .par_iter()
        .map(|r| {
            let (tokens, _) = gen.generate(r)?;
            let cfg = r.meta.config.clone().unwrap_or_else(|| "all".into());
            Ok((
                cfg,
                judge(&tokens, &r.instruction_tokens, &r.text_tokens, &gold),
            ))
        })
        .collect::<Result<_>>()?;
    let mut buckets: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (c, v) in &verdicts {
        let e = buckets.entry(c.clone()).or_default();
        e.0 += *v as usize;
        e.1 += 1;
    }
    let pass_rate: BTreeMap<String, f64> = buckets
        .into_iter()
        .map(|(k, (p, n))| (k, p as f64 / n as f64))
        .collect();
    let average = pass_rate.values().sum::<f64>() / pass_rate.len().max(1) as f64;
    Ok(ComplexReport {
        n: records.len(),
        pass_rate,
        average,
    })
}

/// The decoupling tasks plus the complex-instruction prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub tasks: Vec<EvalTask>,
    pub complex: Vec<PromptRecord>,
}

impl Benchmark {
    /// All four decoupling tasks at `n` records each and `n_complex` complex
    /// prompts, from one seed.
    pub fn build(n: usize, n_complex: usize, seed: u64) -> Result<Self> {
        let tasks = TaskKind::ALL
            .iter()
            .map(|&k| super::build_eval_set(k, n, seed))
            .collect::<Result<_>>()?;
        Ok(Self {
            tasks,
            complex: super::build_complex_set(n_complex, seed)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tasks: Vec<EvalReport>,
    pub complex: ComplexReport,
    /// Mean instruction accuracy over the decoupling tasks.
    pub decoupling_average: f64,
    pub complex_average: f64,
}

impl BenchReport {
    pub fn task(&self, kind: TaskKind) -> Option<&EvalReport> {
        self.tasks.iter().find(|t| t.task == kind)
    }
}

pub fn evaluate_benchmark(
    gen: &(impl Generator + ?Sized),
    bench: &Benchmark,
) -> Result<BenchReport> {
    let tasks: Vec<EvalReport> = bench
        .tasks
        .iter()
        .map(|t| evaluate(gen, t))
        .collect::<Result<_>>()?;
    let complex = evaluate_complex(gen, &bench.complex)?;
    let decoupling_average = tasks.iter().map(|t| t.acc_i).sum::<f64>() / tasks.len().max(1) as f64;
    let complex_average = complex.average;
    Ok(BenchReport {
        tasks,
        complex,
        decoupling_average,
        complex_average,
    })
}
