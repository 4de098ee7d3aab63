//! GridQuest: a 5x5 grid with a key-then-door objective and a tiny
//! vocabulary. Each turn the agent emits a token pair that decodes to a move.
//! A fake key adjacent to the start flips a visible flag when stepped on but
//! contributes nothing; paths are tight enough that detouring onto it makes
//! the task unfinishable, so successful play leaves the decoy direction by
//! the second turn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_pool, Action, EnvSpec, Environment, EpisodeState, Observation};
use crate::error::{Error, Result};
use crate::traj::{TaskId, TokenId};

pub const GRID_SIDE: usize = 5;
const CELLS: usize = GRID_SIDE * GRID_SIDE;
const START: usize = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridQuestSpec {
    pub horizon: usize,
    pub n_variants: usize,
    pub variant_seed: u64,
}

impl Default for GridQuestSpec {
    fn default() -> Self {
        Self { horizon: 8, n_variants: 8, variant_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    key: usize,
    door: usize,
    fake: usize,
}

pub struct GridQuest {
    spec: EnvSpec,
    cfg: GridQuestSpec,
    layouts: Vec<Layout>,
}

fn manhattan(a: usize, b: usize) -> usize {
    let (ar, ac) = (a / GRID_SIDE, a % GRID_SIDE);
    let (br, bc) = (b / GRID_SIDE, b % GRID_SIDE);
    ar.abs_diff(br) + ac.abs_diff(bc)
}

fn apply_move(pos: usize, mv: usize) -> usize {
    let (r, c) = (pos / GRID_SIDE, pos % GRID_SIDE);
    let (r, c) = match mv {
        0 => (r.saturating_sub(1), c),
        1 => ((r + 1).min(GRID_SIDE - 1), c),
        2 => (r, c.saturating_sub(1)),
        3 => (r, (c + 1).min(GRID_SIDE - 1)),
        _ => (r, c),
    };
    r * GRID_SIDE + c
}

impl GridQuest {
    pub fn new(cfg: GridQuestSpec) -> Result<Self> {
        if cfg.horizon < 4 {
            return Err(Error::InvalidConfig("GridQuest horizon must be >= 4".into()));
        }
        if cfg.n_variants < 2 {
            return Err(Error::InvalidConfig("GridQuest needs at least 2 variants".into()));
        }
        let layouts: Vec<Layout> = (0..cfg.n_variants)
            .map(|v| Self::make_layout(&cfg, v))
            .collect::<Result<_>>()?;
        let spec = EnvSpec {
            name: "grid_quest".into(),
            horizon: cfg.horizon,
            vocab_size: 2,
            max_tokens_per_turn: 2,
            variant_pool: split_pool(cfg.n_variants),
            state_count: CELLS * 4,
        };
        spec.validate()?;
        Ok(Self { spec, cfg, layouts })
    }

    /// Deterministic rejection sampling: the key-then-door path must use all
    /// but at most one turn, and stepping onto the fake key first must make
    /// the remaining path too long to finish.
    fn make_layout(cfg: &GridQuestSpec, id: usize) -> Result<Layout> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.variant_seed
                .wrapping_mul(0x2545f4914f6cdd1d)
                .wrapping_add(id as u64 ^ GRID_STREAM_MARKER),
        );
        for _ in 0..100_000 {
            let key = rng.gen_range(0..CELLS);
            let door = rng.gen_range(0..CELLS);
            let fake = rng.gen_range(0..CELLS);
            if key == START || door == START || fake == START {
                continue;
            }
            if key == door || fake == key || fake == door {
                continue;
            }
            if manhattan(START, fake) != 1 {
                continue;
            }
            let path = manhattan(START, key) + manhattan(key, door);
            if path > cfg.horizon || path + 1 < cfg.horizon {
                continue;
            }
            if 1 + manhattan(fake, key) + manhattan(key, door) <= cfg.horizon {
                continue;
            }
            return Ok(Layout { key, door, fake });
        }
        Err(Error::InvalidConfig(format!(
            "no GridQuest layout satisfies the constraints for variant {id} at horizon {}",
            cfg.horizon
        )))
    }

    pub fn layout(&self, task: TaskId) -> (usize, usize, usize) {
        let l = self.layouts[task];
        (l.key, l.door, l.fake)
    }

    fn pack(pos: usize, has_key: bool, has_fake: bool) -> u64 {
        pos as u64 | (u64::from(has_key) << 32) | (u64::from(has_fake) << 33)
    }

    fn unpack(inner: u64) -> (usize, bool, bool) {
        ((inner & 0xffff_ffff) as usize, inner & (1 << 32) != 0, inner & (1 << 33) != 0)
    }

    fn observe(&self, state: &EpisodeState) -> Observation {
        let (pos, has_key, has_fake) = Self::unpack(state.inner);
        Observation {
            state_id: pos + CELLS * (usize::from(has_key) + 2 * usize::from(has_fake)),
            turn_index: state.turn_index,
            feature_tag: state.task_id,
        }
    }
}

// Keeps the two environments' variant streams apart even with equal seeds.
const GRID_STREAM_MARKER: u64 = 0x6772_6964;

impl Environment for GridQuest {
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
            inner: Self::pack(START, false, false),
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    fn step(&self, state: &EpisodeState, action: &Action) -> Result<(EpisodeState, Observation, bool)> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let layout = self.layouts[state.task_id];
        let (pos, mut has_key, mut has_fake) = Self::unpack(state.inner);
        let pos = match action {
            Action::Move(mv) => apply_move(pos, *mv),
            _ => pos,
        };
        if pos == layout.key {
            has_key = true;
        }
        if pos == layout.fake {
            has_fake = true;
        }
        let turn_index = state.turn_index + 1;
        let completed = has_key && pos == layout.door;
        let done = completed || turn_index == self.cfg.horizon;
        let next = EpisodeState {
            task_id: state.task_id,
            turn_index,
            done,
            succeeded: completed,
            inner: Self::pack(pos, has_key, has_fake),
        };
        let obs = self.observe(&next);
        Ok((next, obs, done))
    }

    fn decode_action(&self, tokens: &[TokenId]) -> Action {
        if tokens.len() == 2 && tokens.iter().all(|&t| t < 2) {
            Action::Move(2 * tokens[0] + tokens[1])
        } else {
            Action::NoOp
        }
    }
}
