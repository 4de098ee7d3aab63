//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("trajectory has no turns or a turn has no token steps")]
    EmptyTrajectory,
    #[error("unknown task variant {0}")]
    UnknownTask(usize),
    #[error("task variant {task} is not in the {split} split")]
    TaskNotInSplit { task: usize, split: String },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("trajectory is incomplete (episode never reached a terminal state)")]
    IncompleteTrajectory,
    #[error("advantages are not aligned with the batch: {0}")]
    MisalignedAdvantages(String),
    #[error("GRPO group must have at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("batch size {batch} is not divisible by group size {group}")]
    BadGrouping { batch: usize, group: usize },
    #[error("entropy window is empty")]
    EmptyWindow,
    #[error("negative entropy {0} pushed into the window")]
    NegativeEntropy(f64),
    #[error("RL step {k} out of range (K = {total})")]
    StepOutOfRange { k: usize, total: usize },
    #[error("non-finite loss at step {k}: {detail}")]
    NonFiniteLoss { k: usize, detail: String },
    #[error("feature map mismatch: {0}")]
    FeatureMapMismatch(String),
    #[error("MDP too large to enumerate: {0}")]
    OversizeMdp(String),
    #[error("optimizer failed to reach gradient norm {target:e}, achieved {achieved:e}")]
    OptimizerStalled { target: f64, achieved: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("metrics are empty")]
    EmptyMetrics,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
