//! Trajectory domain types: token steps, turns, trajectories, batches.
//!
//! An episode is `T` turns of token sequences with a single binary reward at
//! the end; no intermediate reward is ever stored, which makes the sparsity
//! invariant hold by construction.

use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};

pub type TokenId = usize;
pub type TaskId = usize;

/// One autoregressive generation position: the full token distribution the
/// policy produced, the token it sampled, and the quantities recorded for
/// later loss evaluation (all in nats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenStep {
    pub probs: Vec<f64>,
    pub chosen: TokenId,
    pub logprob: f64,
    pub entropy: f64,
}

impl TokenStep {
    /// Checks the distribution axioms plus internal consistency of the
    /// recorded logprob/entropy.
    pub fn validate(&self) -> Result<()> {
        crate::entropy::validate_probs(&self.probs)?;
        if self.chosen >= self.probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "chosen token {} out of range for vocab {}",
                self.chosen,
                self.probs.len()
            )));
        }
        let max_h = (self.probs.len() as f64).ln() + 1e-12;
        if !(0.0..=max_h).contains(&self.entropy) {
            return Err(Error::InvalidDistribution(format!(
                "entropy {} outside [0, ln|V|]",
                self.entropy
            )));
        }
        if (self.logprob - self.probs[self.chosen].ln()).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(
                "logprob does not match ln(probs[chosen])".into(),
            ));
        }
        Ok(())
    }
}

/// One agent-environment exchange: the observation the policy saw, the token
/// steps it emitted, and the action those tokens decoded to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub observation: Observation,
    pub steps: Vec<TokenStep>,
    pub decoded_action: Action,
}

impl Turn {
    pub fn token_count(&self) -> usize {
        self.steps.len()
    }
}

/// A complete episode: `T` turns plus the single terminal binary reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<Turn>,
    /// 0 or 1; the only nonzero reward in the episode.
    pub terminal_reward: u8,
    pub task_id: TaskId,
    pub rollout_seed: u64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() || self.turns.iter().any(|t| t.steps.is_empty()) {
            return Err(Error::EmptyTrajectory);
        }
        if self.terminal_reward > 1 {
            return Err(Error::InvalidConfig(format!(
                "terminal reward {} is not binary",
                self.terminal_reward
            )));
        }
        Ok(())
    }

    pub fn reward_f64(&self) -> f64 {
        f64::from(self.terminal_reward)
    }

    pub fn total_tokens(&self) -> usize {
        self.turns.iter().map(Turn::token_count).sum()
    }
}

/// A batch of trajectories collected at RL step `rl_step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub rl_step: usize,
}

impl Batch {
    pub fn new(trajectories: Vec<Trajectory>, rl_step: usize) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { trajectories, rl_step })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Checks the GRPO grouping contract: batch divisible into contiguous
    /// groups of `group_size`, each sharing one task id.
    pub fn validate_groups(&self, group_size: usize) -> Result<()> {
        if group_size < 2 {
            return Err(Error::GroupTooSmall(group_size));
        }
        if !self.len().is_multiple_of(group_size) {
            return Err(Error::BadGrouping { batch: self.len(), group: group_size });
        }
        for group in self.trajectories.chunks(group_size) {
            let task = group[0].task_id;
            if group.iter().any(|t| t.task_id != task) {
                return Err(Error::BadGrouping { batch: self.len(), group: group_size });
            }
        }
        Ok(())
    }
}
