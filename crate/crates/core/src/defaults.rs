//! Documented default seeds and sizes; the quickstart reproduces the
//! reference numbers with these.

/// Participants in the reference study.
pub const PARTICIPANTS: u32 = 16;
/// Trials per participant and gesture.
pub const TRIALS: u32 = 5;
/// Base seed of the reference dataset.
pub const DATA_SEED: u64 = 42;
/// Seed of the reference model.
pub const MODEL_SEED: u64 = 7;
/// Seed of the evaluation protocols.
pub const EVAL_SEED: u64 = 7;
