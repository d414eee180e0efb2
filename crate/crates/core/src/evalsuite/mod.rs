//! Benchmarks, studies and the ablation driver. Every evaluation decodes
//! greedily and scores with the exact oracles.

mod ablation;
mod metrics;
mod studies;
mod tasks;

#[cfg(test)]
mod tests;

pub use ablation::{default_presets, run_ablation, AblationRow, AblationTable};
pub use metrics::{
    evaluate, evaluate_benchmark, evaluate_complex, macro_f1, spearman, BenchReport, Benchmark,
    ComplexReport, EvalReport, Generator, EVAL_MAX_NEW,
};
pub use studies::{
    judge_agreement_study, oracle_generator, speed_pitch_study, AttributeResult,
    JudgeAgreementReport, SpeedPitchReport,
};
pub use tasks::{build_complex_set, build_eval_set, Difficulty, EvalTask, TaskKind, TaskType};
