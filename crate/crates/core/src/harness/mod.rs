//! Training, evaluation, ablation, and run outputs.

pub mod metrics;
pub mod report;
pub mod synth;
pub mod train;

pub use metrics::{rank_of, Bucket, RankingReport};
pub use train::{ablate, evaluate, train, StepLog, TrainOutcome};
