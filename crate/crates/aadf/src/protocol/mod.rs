//! Training and inference protocols: worst-of-K red-team optimization with
//! AdamW and global-norm clipping, and the randomized test-time defense with
//! mean-logit / max-evidence aggregation.
//!
//! Candidate evaluation and defense views are pure forward passes and could
//! run concurrently; gradient accumulation and optimizer steps are strictly
//! sequential in documented order so results stay bit-exact across runs and
//! thread counts.

mod defense;
mod optimizer;
mod train;

pub use defense::{
    apply_jitter, sample_jitters, ttd_predict, ttd_predict_with_jitters, DefendedPrediction,
    DefenseConfig, JitterParams,
};
pub use optimizer::{clip_global_norm, global_norm, AdamW};
pub use train::{
    candidate_instances, select_worst_of_k, train, StepRecord, TrainConfig, TrainMode,
    TrainSample,
};
