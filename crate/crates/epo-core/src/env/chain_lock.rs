//! ChainLock: the agent emits one multi-token command per turn and must hit
//! the variant's hidden sub-goal commands in order. All intermediate feedback
//! is through state features; reward is a single {0,1} at episode end.
//!
//! The cascade trap: a decoy command (shared across variants) advances a
//! visible streak counter that looks like progress, but two consecutive decoy
//! turns at the start jam the lock and force reward 0. Any sequence that
//! succeeds therefore deviates from the decoy no later than the second turn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_pool, Action, EnvSpec, Environment, EpisodeState, Observation};
use crate::error::{Error, Result};
use crate::traj::{TaskId, TokenId};

pub const DECOY_TOKEN: TokenId = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainLockSpec {
    /// Turns per episode.
    pub horizon: usize,
    pub vocab_size: usize,
    /// Tokens per command; every turn emits exactly this many.
    pub cmd_len: usize,
    pub n_variants: usize,
    /// Sub-goal commands per variant (difficulty knob).
    pub n_subgoals: usize,
    /// Seed for the hidden variant table.
    pub variant_seed: u64,
}

impl Default for ChainLockSpec {
    fn default() -> Self {
        Self {
            horizon: 6,
            vocab_size: 8,
            cmd_len: 1,
            n_variants: 8,
            n_subgoals: 3,
            variant_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Variant {
    subgoals: Vec<Vec<TokenId>>,
}

/// Decoy tracking: 0 = safe, 1 = first turn was the decoy, 2 = jammed.
const DECOY_SAFE: u64 = 0;
const DECOY_STREAK: u64 = 1;
const DECOY_JAMMED: u64 = 2;

pub struct ChainLock {
    spec: EnvSpec,
    cfg: ChainLockSpec,
    variants: Vec<Variant>,
    decoy: Vec<TokenId>,
}

impl ChainLock {
    pub fn new(cfg: ChainLockSpec) -> Result<Self> {
        if cfg.horizon < 2 {
            return Err(Error::InvalidConfig("ChainLock horizon must be >= 2".into()));
        }
        if cfg.n_subgoals == 0 || cfg.n_subgoals > cfg.horizon {
            return Err(Error::InvalidConfig(
                "ChainLock n_subgoals must be in 1..=horizon".into(),
            ));
        }
        let command_space = (cfg.vocab_size as u64).pow(cfg.cmd_len as u32);
        if u64::try_from(cfg.n_subgoals).unwrap() + 1 > command_space {
            return Err(Error::InvalidConfig(
                "not enough distinct commands for the requested sub-goal count".into(),
            ));
        }
        if cfg.n_variants < 2 {
            return Err(Error::InvalidConfig("ChainLock needs at least 2 variants".into()));
        }
        let decoy = vec![DECOY_TOKEN; cfg.cmd_len];
        let variants = (0..cfg.n_variants)
            .map(|v| Self::make_variant(&cfg, v, &decoy))
            .collect();
        let n_states = 3 * (cfg.n_subgoals + 1);
        let spec = EnvSpec {
            name: "chain_lock".into(),
            horizon: cfg.horizon,
            vocab_size: cfg.vocab_size,
            max_tokens_per_turn: cfg.cmd_len,
            variant_pool: split_pool(cfg.n_variants),
            state_count: n_states,
        };
        spec.validate()?;
        Ok(Self { spec, cfg, variants, decoy })
    }

    fn make_variant(cfg: &ChainLockSpec, id: usize, decoy: &[TokenId]) -> Variant {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.variant_seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(id as u64),
        );
        let mut subgoals: Vec<Vec<TokenId>> = Vec::with_capacity(cfg.n_subgoals);
        while subgoals.len() < cfg.n_subgoals {
            let cmd: Vec<TokenId> =
                (0..cfg.cmd_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
            if cmd != decoy && !subgoals.contains(&cmd) {
                subgoals.push(cmd);
            }
        }
        Variant { subgoals }
    }

    pub fn subgoals(&self, task_id: TaskId) -> &[Vec<TokenId>] {
        &self.variants[task_id].subgoals
    }

    pub fn decoy_command(&self) -> &[TokenId] {
        &self.decoy
    }

    fn pack(matched: usize, decoy_state: u64) -> u64 {
        matched as u64 | (decoy_state << 32)
    }

    fn unpack(inner: u64) -> (usize, u64) {
        ((inner & 0xffff_ffff) as usize, inner >> 32)
    }

    fn state_id(&self, matched: usize, decoy_state: u64) -> usize {
        matched + (self.cfg.n_subgoals + 1) * decoy_state as usize
    }

    fn observe(&self, state: &EpisodeState) -> Observation {
        let (matched, decoy_state) = Self::unpack(state.inner);
        Observation {
            state_id: self.state_id(matched, decoy_state),
            turn_index: state.turn_index,
            feature_tag: state.task_id,
        }
    }
}

impl Environment for ChainLock {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, task_id: TaskId, _seed: u64) -> Result<(EpisodeState, Observation)> {
        if task_id >= self.cfg.n_variants {
            return Err(Error::UnknownTask(task_id));
        }
        let state = EpisodeState {
            task_id,
            turn_index: 0,
            done: false,
            succeeded: false,
            inner: Self::pack(0, DECOY_SAFE),
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    fn step(&self, state: &EpisodeState, action: &Action) -> Result<(EpisodeState, Observation, bool)> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let (mut matched, mut decoy_state) = Self::unpack(state.inner);
        let variant = &self.variants[state.task_id];
        let cmd: Option<&[TokenId]> = match action {
            Action::Command(tokens) if tokens.len() == self.cfg.cmd_len => Some(tokens),
            _ => None,
        };
        let is_decoy = cmd == Some(self.decoy.as_slice());

        if is_decoy {
            if state.turn_index == 0 {
                decoy_state = DECOY_STREAK;
            } else if state.turn_index == 1 && decoy_state == DECOY_STREAK {
                decoy_state = DECOY_JAMMED;
            }
        } else if decoy_state == DECOY_STREAK {
            decoy_state = DECOY_SAFE;
        }

        if matched < variant.subgoals.len() && cmd == Some(variant.subgoals[matched].as_slice()) {
            matched += 1;
        }

        let turn_index = state.turn_index + 1;
        let jammed = decoy_state == DECOY_JAMMED;
        let completed = matched == variant.subgoals.len() && !jammed;
        let done = completed || jammed || turn_index == self.cfg.horizon;
        let next = EpisodeState {
            task_id: state.task_id,
            turn_index,
            done,
            succeeded: completed,
            inner: Self::pack(matched, decoy_state),
        };
        let obs = self.observe(&next);
        Ok((next, obs, done))
    }

    fn decode_action(&self, tokens: &[TokenId]) -> Action {
        if tokens.len() == self.cfg.cmd_len && tokens.iter().all(|&t| t < self.cfg.vocab_size) {
            Action::Command(tokens.to_vec())
        } else {
            Action::NoOp
        }
    }
}
