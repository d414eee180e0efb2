//! Progressive post-training of a small autoregressive token policy over a
//! synthetic controllable-speech domain.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] – dense f64 tensors, a reverse-mode tape, Adam and a
//!   finite-difference gradient checker.
//! * [`policy`] – a causal self-attention sequence model with exact
//!   teacher-forced log-probabilities, seeded sampling and checkpoints.
//! * [`synthvoice`] – the token domain: vocabulary, renderer, exact reward
//!   oracles, judges and dataset builders.
//! * [`training`] – pretraining, preference optimisation (S1), decoupling GRPO
//!   (S2), instruction GRPO (S3) and curriculum plans.
//! * [`evalsuite`] – decoupling benchmark, complex-instruction benchmark,
//!   speed/pitch rank-correlation study, judge agreement and ablations.

pub mod error;
pub mod evalsuite;
pub mod numerics;
pub mod policy;
pub mod rng;
pub mod synthvoice;
pub mod training;

pub use error::{Error, Result};
pub use evalsuite::{BenchReport, Benchmark, EvalReport, EvalTask, TaskKind};
pub use numerics::{Adam, AdamState, Gradients, Graph, Tensor, Var};
pub use policy::{Checkpoint, Policy, PolicyConfig, SampleParams};
pub use synthvoice::{
    Emotion, JudgeConfig, Pitch, PreferenceTriple, PromptRecord, RecordMeta, RewardVector, Speed,
    TokenSeq, UtteranceSpec,
};
pub use training::{
    CurriculumPlan, DpoConfig, GroupRollout, GrpoConfig, PretrainConfig, StageKind,
};
