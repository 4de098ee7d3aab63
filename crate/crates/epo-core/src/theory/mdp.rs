//! Exact finite-horizon tabular MDPs small enough to enumerate every action
//! sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_STATES: usize = 6;
pub const MAX_ACTIONS: usize = 4;
pub const MAX_HORIZON: usize = 5;

/// A deterministic finite-horizon MDP: `transitions[s][a]` is the successor
/// state, `rewards[s][a]` the immediate reward. Rewards live on a coarse grid
/// so optimal-return ties are exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub transitions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub initial_state: usize,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_states > MAX_STATES {
            return Err(Error::OversizeMdp(format!("n_states = {}", self.n_states)));
        }
        if self.n_actions == 0 || self.n_actions > MAX_ACTIONS {
            return Err(Error::OversizeMdp(format!("n_actions = {}", self.n_actions)));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return Err(Error::OversizeMdp(format!("horizon = {}", self.horizon)));
        }
        if self.initial_state >= self.n_states {
            return Err(Error::InvalidConfig("initial state out of range".into()));
        }
        let shape_ok = self.transitions.len() == self.n_states
            && self.rewards.len() == self.n_states
            && self
                .transitions
                .iter()
                .zip(&self.rewards)
                .all(|(t, r)| t.len() == self.n_actions && r.len() == self.n_actions);
        if !shape_ok {
            return Err(Error::InvalidConfig("transition/reward tables malformed".into()));
        }
        if self.transitions.iter().flatten().any(|&s| s >= self.n_states) {
            return Err(Error::InvalidConfig("transition target out of range".into()));
        }
        Ok(())
    }

    pub fn n_paths(&self) -> usize {
        self.n_actions.pow(self.horizon as u32)
    }

    /// All `|A|^H` action sequences from the initial state, with the visited
    /// decision states and total return precomputed (both are independent of
    /// the policy).
    pub fn enumerate_paths(&self) -> Vec<PathInfo> {
        let mut out = Vec::with_capacity(self.n_paths());
        for mut idx in 0..self.n_paths() {
            let mut actions = Vec::with_capacity(self.horizon);
            for _ in 0..self.horizon {
                actions.push(idx % self.n_actions);
                idx /= self.n_actions;
            }
            let mut states = Vec::with_capacity(self.horizon);
            let mut s = self.initial_state;
            let mut ret = 0.0;
            for &a in &actions {
                states.push(s);
                ret += self.rewards[s][a];
                s = self.transitions[s][a];
            }
            out.push(PathInfo { actions, states, ret });
        }
        out
    }

    /// Maximum return over all action sequences and the count of sequences
    /// achieving it (within `tie_tol`).
    pub fn optimal_paths(&self, tie_tol: f64) -> (f64, usize) {
        let paths = self.enumerate_paths();
        let v_star = paths.iter().map(|p| p.ret).fold(f64::NEG_INFINITY, f64::max);
        let count = paths.iter().filter(|p| p.ret >= v_star - tie_tol).count();
        (v_star, count)
    }

    /// DP route to the same pair: optimal value by backward induction and
    /// the optimal-suffix counts N_t(s).
    pub fn optimal_by_dp(&self, tie_tol: f64) -> (f64, Vec<Vec<f64>>, Vec<Vec<u64>>) {
        let mut values = vec![vec![0.0; self.n_states]; self.horizon + 1];
        let mut counts = vec![vec![0u64; self.n_states]; self.horizon + 1];
        counts[self.horizon] = vec![1; self.n_states];
        for t in (0..self.horizon).rev() {
            for s in 0..self.n_states {
                let best = (0..self.n_actions)
                    .map(|a| self.rewards[s][a] + values[t + 1][self.transitions[s][a]])
                    .fold(f64::NEG_INFINITY, f64::max);
                values[t][s] = best;
                counts[t][s] = (0..self.n_actions)
                    .filter(|&a| {
                        self.rewards[s][a] + values[t + 1][self.transitions[s][a]] >= best - tie_tol
                    })
                    .map(|a| counts[t + 1][self.transitions[s][a]])
                    .sum();
            }
        }
        (values[0][self.initial_state], values, counts)
    }

    /// States reachable at each time step by some action sequence.
    pub fn reachable(&self) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; self.n_states]; self.horizon];
        reach[0][self.initial_state] = true;
        for t in 1..self.horizon {
            for s in 0..self.n_states {
                if reach[t - 1][s] {
                    for a in 0..self.n_actions {
                        reach[t][self.transitions[s][a]] = true;
                    }
                }
            }
        }
        reach
    }
}

#[derive(Debug, Clone)]
pub struct PathInfo {
    pub actions: Vec<usize>,
    pub states: Vec<usize>,
    pub ret: f64,
}

/// Seeded random MDP within the given size caps; rewards are multiples of
/// 0.25 in [0, 1].
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize, max_horizon: usize) -> MdpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = rng.gen_range(2..=max_states.min(MAX_STATES));
    let n_actions = rng.gen_range(2..=max_actions.min(MAX_ACTIONS));
    let horizon = rng.gen_range(2..=max_horizon.min(MAX_HORIZON));
    let transitions = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(0..n_states)).collect())
        .collect();
    let rewards = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(0..=4) as f64 * 0.25).collect())
        .collect();
    MdpSpec { n_states, n_actions, horizon, transitions, rewards, initial_state: 0 }
}
