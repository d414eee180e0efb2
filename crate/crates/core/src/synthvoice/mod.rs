//! SynthVoice: a token-level stand-in for controllable speech.
//!
//! An utterance is `[BOS, SPK, PITCH, PH×d …, EOS]` where each phoneme token
//! also carries an emotion coloring and is repeated once per duration unit.
//! Every factor can be read back exactly, which turns each reward model into
//! an exact oracle.

mod datasets;
mod instruction;
mod judge;
mod oracles;
mod render;
pub mod vocab;

pub use datasets::{
    assemble_prompt, make_dpo_pairs, make_pretrain_corpus, make_s2_prompts, make_s3_prompts,
    other_emotion, random_content, random_pitch, random_speed, read_jsonl, render_reference,
    s3_record, text_tokens, to_jsonl, write_jsonl, PairMeta, PreferenceTriple, PretrainKnobs,
    PromptRecord, RecordMeta, S2Knobs, MAX_REF_CONTENT, S3_CONFIGS,
};
pub use instruction::{
    parse_instruction, render_instruction, requested_emotion, requested_pitch, requested_speed,
    Intent,
};
pub use judge::{gold_checks, judge, Checks, Flip, FlipNoise, JudgeConfig};
pub use oracles::{
    content_error, cosine, emotion_similarity, levenshtein, ser_distribution, ser_oracle,
    similarity_embedding, speaker_similarity, sv_oracle, text_phonemes, Objective, RewardVector,
    ORACLE_VERSION,
};
pub use render::{
    argmax_emotion, collapse, decode_attributes, render_utterance, Decoded, UtteranceSpec,
    MAX_CONTENT, MIN_CONTENT,
};
pub use vocab::{Emotion, Pitch, Speed, TokenSeq};
