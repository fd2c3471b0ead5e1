//! Core library for the stable counting capacity harness.
//!
//! The harness measures the longest input length at which a language model
//! still returns exact counts. It builds counting prompts at jittered target
//! lengths, walks an adaptive ladder (doubling expansion, then binary
//! refinement) over tier centers, and certifies each tier as stable or
//! unstable from the normalized mean absolute error of the model's answers.
//! Supporting modules provide the statistical guardrails that make a "stable"
//! verdict meaningful against blind guessing, synthetic model oracles for
//! self-validation, a provider-agnostic model gateway, response parsing and
//! failure auditing, two task batteries (dual-task interference and agent
//! operations), and an append-only trial store with report emission.

pub mod assay;
pub mod battery;
pub mod gateway;
pub mod ladder;
pub mod nested;
pub mod oracle;
pub mod parse;
pub mod report;
pub mod seeding;
pub mod stats;
