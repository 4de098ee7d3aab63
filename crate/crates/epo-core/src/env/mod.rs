//! Deterministic multi-turn environments with a single binary reward at
//! episode end.
//!
//! Both built-in environments are pure: transitions are functions of
//! (state, action), the reward is a function of the completed action
//! sequence, and `reset` depends only on the task variant. The episode seed
//! is carried along for bookkeeping (it drives the policy's sampling stream,
//! never the environment).

mod chain_lock;
mod grid_quest;

pub use chain_lock::{ChainLock, ChainLockSpec};
pub use grid_quest::{GridQuest, GridQuestSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{TaskId, TokenId, Trajectory};

/// Which half of the variant pool an evaluation draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Iid,
    Ood,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Iid => write!(f, "IID"),
            Split::Ood => write!(f, "OOD"),
        }
    }
}

/// A task variant and its split assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantInfo {
    pub id: TaskId,
    pub is_ood: bool,
}

/// Static description of an environment instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    /// Turns per episode (upper bound; episodes may finish early).
    pub horizon: usize,
    pub vocab_size: usize,
    pub max_tokens_per_turn: usize,
    pub variant_pool: Vec<VariantInfo>,
    /// Number of distinct `state_id` values observations can carry.
    pub state_count: usize,
}

impl EnvSpec {
    pub fn variants_in(&self, split: Split) -> Vec<TaskId> {
        self.variant_pool
            .iter()
            .filter(|v| (split == Split::Ood) == v.is_ood)
            .map(|v| v.id)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidConfig("horizon must be >= 2".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be >= 2".into()));
        }
        let iid = self.variants_in(Split::Iid).len();
        let ood = self.variants_in(Split::Ood).len();
        if iid == 0 || ood == 0 {
            return Err(Error::InvalidConfig(
                "variant pool must contain both IID and OOD variants".into(),
            ));
        }
        Ok(())
    }
}

/// What the policy sees at the start of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub state_id: usize,
    pub turn_index: usize,
    /// Small integer descriptor for policy featurization (carries the task
    /// variant in both built-in environments).
    pub feature_tag: usize,
}

/// Environment action decoded from a token sequence. Unknown sequences decode
/// to `NoOp` so rollouts are total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Command(Vec<TokenId>),
    Move(usize),
    NoOp,
}

/// Per-episode state threaded through `step`. Opaque to callers except for
/// the observation and done flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub task_id: TaskId,
    pub turn_index: usize,
    pub done: bool,
    pub succeeded: bool,
    /// Environment-specific packed state.
    pub inner: u64,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic initial state for (task, seed). Repeated calls are
    /// identical; the seed is recorded in trajectories but does not perturb
    /// the environment.
    fn reset(&self, task_id: TaskId, seed: u64) -> Result<(EpisodeState, Observation)>;

    /// Pure transition. Errors if the episode is already done.
    fn step(&self, state: &EpisodeState, action: &Action) -> Result<(EpisodeState, Observation, bool)>;

    /// Decodes a token sequence into an action; total (unknown -> NoOp).
    fn decode_action(&self, tokens: &[TokenId]) -> Action;

    /// Recomputes the binary outcome of a completed trajectory by replaying
    /// its decoded actions from reset. Errors if the replay never reaches a
    /// terminal state.
    fn terminal_reward(&self, traj: &Trajectory) -> Result<u8> {
        let (mut state, _) = self.reset(traj.task_id, traj.rollout_seed)?;
        for turn in &traj.turns {
            if state.done {
                return Err(Error::EpisodeDone);
            }
            let (next, _, _) = self.step(&state, &turn.decoded_action)?;
            state = next;
        }
        if !state.done {
            return Err(Error::IncompleteTrajectory);
        }
        Ok(u8::from(state.succeeded))
    }

    /// Like `reset`, but refuses variants outside the given split. Evaluation
    /// handles restricted to one split use this to catch cross-split leaks.
    fn reset_in_split(
        &self,
        task_id: TaskId,
        seed: u64,
        split: Split,
    ) -> Result<(EpisodeState, Observation)> {
        let in_split = self.spec().variants_in(split).contains(&task_id);
        if !in_split {
            return Err(Error::TaskNotInSplit { task: task_id, split: split.to_string() });
        }
        self.reset(task_id, seed)
    }
}

/// Builds the standard half-IID/half-OOD variant pool.
pub(crate) fn split_pool(n_variants: usize) -> Vec<VariantInfo> {
    (0..n_variants)
        .map(|id| VariantInfo { id, is_ood: id >= n_variants / 2 })
        .collect()
}
