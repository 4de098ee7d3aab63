//! Softmax token-sequence policies with exact analytic gradients.
//!
//! The token distribution conditions on (state id, feature tag, turn index,
//! hash-bucketed token prefix), a tabular context model. Two scorers map a
//! context to logits over the vocabulary:
//!
//! * `Tabular`: one logit row per context. Gradients are the classic softmax
//!   identities.
//! * `OneHidden`: a small tanh MLP over a deterministic feature vector, with
//!   hand-derived backprop. Exists to guard the loss algebra against
//!   tabular-only shortcuts.
//!
//! Every gradient path funnels through [`PolicyParams::accumulate_grad`],
//! which takes dL/dlogits for one token position and adds dL/dθ into a flat
//! gradient vector, so all losses share a single verified backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Observation};
use crate::error::{Error, Result};
use crate::traj::{TokenId, TokenStep, Trajectory};

/// Deterministic map from (observation, turn index, token prefix) to a
/// context index (tabular) or feature vector (MLP).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub n_states: usize,
    pub n_tags: usize,
    pub horizon: usize,
    pub prefix_buckets: usize,
    pub vocab_size: usize,
    /// MLP feature dimension; unused by the tabular scorer.
    pub feature_dim: usize,
}

impl FeatureMap {
    pub fn for_env(spec: &EnvSpec, prefix_buckets: usize, feature_dim: usize) -> Self {
        Self {
            n_states: spec.state_count,
            n_tags: spec.variant_pool.len(),
            horizon: spec.horizon,
            prefix_buckets: prefix_buckets.max(1),
            vocab_size: spec.vocab_size,
            feature_dim: feature_dim.max(8),
        }
    }

    pub fn n_contexts(&self) -> usize {
        self.n_states * self.n_tags * self.horizon * self.prefix_buckets
    }

    fn prefix_bucket(&self, prefix: &[TokenId]) -> usize {
        let mut h: u64 = 1469598103934665603;
        for &t in prefix {
            h ^= t as u64 + 1;
            h = h.wrapping_mul(1099511628211);
        }
        (h % self.prefix_buckets as u64) as usize
    }

    pub fn context_index(&self, obs: &Observation, turn: usize, prefix: &[TokenId]) -> usize {
        let s = obs.state_id.min(self.n_states - 1);
        let g = obs.feature_tag.min(self.n_tags - 1);
        let t = turn.min(self.horizon - 1);
        ((s * self.n_tags + g) * self.horizon + t) * self.prefix_buckets
            + self.prefix_bucket(prefix)
    }

    /// Dense feature vector for the MLP scorer: a few normalized scalars plus
    /// two hashed one-hot positions.
    pub fn features(&self, obs: &Observation, turn: usize, prefix: &[TokenId]) -> Vec<f64> {
        let mut x = vec![0.0; self.feature_dim];
        let bucket = self.prefix_bucket(prefix);
        x[0] = obs.state_id as f64 / self.n_states as f64;
        x[1] = turn as f64 / self.horizon as f64;
        x[2] = obs.feature_tag as f64 / self.n_tags as f64;
        x[3] = bucket as f64 / self.prefix_buckets as f64;
        let slots = self.feature_dim - 4;
        let h1 = (obs.state_id * 31 + obs.feature_tag * 7 + turn) % slots;
        let h2 = (obs.state_id * 13 + bucket * 5 + turn * 3 + 1) % slots;
        x[4 + h1] = 1.0;
        x[4 + h2] += 1.0;
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Tabular,
    OneHidden { width: usize },
}

/// Policy parameters: a flat weight vector interpreted per scorer kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyParams {
    pub scorer: ScorerKind,
    pub feature_map: FeatureMap,
    pub weights: Vec<f64>,
}

/// MLP weight layout offsets: W1 (width x dim), b1 (width), W2 (V x width),
/// b2 (V), flattened in that order.
struct MlpShape {
    width: usize,
    dim: usize,
    vocab: usize,
}

impl MlpShape {
    fn n_params(&self) -> usize {
        self.width * self.dim + self.width + self.vocab * self.width + self.vocab
    }
    fn w1(&self, j: usize, i: usize) -> usize {
        j * self.dim + i
    }
    fn b1(&self, j: usize) -> usize {
        self.width * self.dim + j
    }
    fn w2(&self, v: usize, j: usize) -> usize {
        self.width * self.dim + self.width + v * self.width + j
    }
    fn b2(&self, v: usize) -> usize {
        self.width * self.dim + self.width + self.vocab * self.width + v
    }
}

impl PolicyParams {
    pub fn n_params_for(scorer: ScorerKind, fm: &FeatureMap) -> usize {
        match scorer {
            ScorerKind::Tabular => fm.n_contexts() * fm.vocab_size,
            ScorerKind::OneHidden { width } => {
                MlpShape { width, dim: fm.feature_dim, vocab: fm.vocab_size }.n_params()
            }
        }
    }

    pub fn zeros(scorer: ScorerKind, feature_map: FeatureMap) -> Self {
        let n = Self::n_params_for(scorer, &feature_map);
        Self { scorer, feature_map, weights: vec![0.0; n] }
    }

    pub fn random<R: Rng>(scorer: ScorerKind, feature_map: FeatureMap, scale: f64, rng: &mut R) -> Self {
        let n = Self::n_params_for(scorer, &feature_map);
        let weights = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect();
        Self { scorer, feature_map, weights }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn mlp_shape(&self) -> MlpShape {
        match self.scorer {
            ScorerKind::OneHidden { width } => MlpShape {
                width,
                dim: self.feature_map.feature_dim,
                vocab: self.feature_map.vocab_size,
            },
            ScorerKind::Tabular => unreachable!("mlp_shape on tabular scorer"),
        }
    }

    fn logits(&self, obs: &Observation, turn: usize, prefix: &[TokenId]) -> Vec<f64> {
        let v = self.feature_map.vocab_size;
        match self.scorer {
            ScorerKind::Tabular => {
                let ctx = self.feature_map.context_index(obs, turn, prefix);
                self.weights[ctx * v..(ctx + 1) * v].to_vec()
            }
            ScorerKind::OneHidden { .. } => {
                let sh = self.mlp_shape();
                let x = self.feature_map.features(obs, turn, prefix);
                let mut z = vec![0.0; v];
                for j in 0..sh.width {
                    let mut pre = self.weights[sh.b1(j)];
                    for (i, xi) in x.iter().enumerate() {
                        pre += self.weights[sh.w1(j, i)] * xi;
                    }
                    let h = pre.tanh();
                    for (tok, zt) in z.iter_mut().enumerate() {
                        *zt += self.weights[sh.w2(tok, j)] * h;
                    }
                }
                for (tok, zt) in z.iter_mut().enumerate() {
                    *zt += self.weights[sh.b2(tok)];
                }
                z
            }
        }
    }

    /// Softmax token distribution at one generation position.
    pub fn token_probs(&self, obs: &Observation, turn: usize, prefix: &[TokenId]) -> Vec<f64> {
        let z = self.logits(obs, turn, prefix);
        softmax(&z)
    }

    /// Adds `dlogits . dlogits/dθ` into `grad`. `dlogits` is dL/dz for the
    /// token position identified by (obs, turn, prefix).
    pub fn accumulate_grad(
        &self,
        grad: &mut [f64],
        obs: &Observation,
        turn: usize,
        prefix: &[TokenId],
        dlogits: &[f64],
    ) {
        debug_assert_eq!(grad.len(), self.weights.len());
        let v = self.feature_map.vocab_size;
        debug_assert_eq!(dlogits.len(), v);
        match self.scorer {
            ScorerKind::Tabular => {
                let ctx = self.feature_map.context_index(obs, turn, prefix);
                for (tok, &d) in dlogits.iter().enumerate() {
                    grad[ctx * v + tok] += d;
                }
            }
            ScorerKind::OneHidden { .. } => {
                let sh = self.mlp_shape();
                let x = self.feature_map.features(obs, turn, prefix);
                for j in 0..sh.width {
                    let mut pre = self.weights[sh.b1(j)];
                    for (i, xi) in x.iter().enumerate() {
                        pre += self.weights[sh.w1(j, i)] * xi;
                    }
                    let h = pre.tanh();
                    let mut dh = 0.0;
                    for (tok, &d) in dlogits.iter().enumerate() {
                        grad[sh.w2(tok, j)] += d * h;
                        dh += d * self.weights[sh.w2(tok, j)];
                    }
                    let dpre = dh * (1.0 - h * h);
                    grad[sh.b1(j)] += dpre;
                    for i in 0..sh.dim {
                        grad[sh.w1(j, i)] += dpre * x[i];
                    }
                }
                for (tok, &d) in dlogits.iter().enumerate() {
                    grad[sh.b2(tok)] += d;
                }
            }
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&zi| (zi - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// dL/dlogits for a loss of the form `c_lp * logprob(chosen) + c_h * H` at a
/// single token position with distribution `probs`.
pub fn dlogits_for(probs: &[f64], chosen: TokenId, c_logprob: f64, c_entropy: f64) -> Vec<f64> {
    let h = crate::entropy::entropy_unchecked(probs);
    probs
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            let d_lp = if v == chosen { 1.0 - p } else { -p };
            let d_h = if p > 0.0 { -p * (p.ln() + h) } else { 0.0 };
            c_logprob * d_lp + c_entropy * d_h
        })
        .collect()
}

/// How `act` picks tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Inverse-CDF sampling from the policy's RNG stream.
    Stochastic,
    /// Argmax with lowest-index tie-break; used for evaluation.
    Greedy,
}

fn pick<R: Rng>(probs: &[f64], sampling: Sampling, rng: &mut R) -> TokenId {
    match sampling {
        Sampling::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        Sampling::Stochastic => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        }
    }
}

/// Autoregressively samples one turn: up to `max_tokens` tokens, each step
/// recording the full distribution, the chosen token, its logprob, and the
/// entropy at that position.
pub fn act<R: Rng>(
    params: &PolicyParams,
    obs: Observation,
    turn_index: usize,
    max_tokens: usize,
    sampling: Sampling,
    rng: &mut R,
) -> (Vec<TokenStep>, Vec<TokenId>) {
    let mut steps = Vec::with_capacity(max_tokens);
    let mut prefix: Vec<TokenId> = Vec::with_capacity(max_tokens);
    for _ in 0..max_tokens {
        let probs = params.token_probs(&obs, turn_index, &prefix);
        let chosen = pick(&probs, sampling, rng);
        let entropy = crate::entropy::entropy_unchecked(&probs);
        let logprob = probs[chosen].ln();
        steps.push(TokenStep { probs: probs.clone(), chosen, logprob, entropy });
        prefix.push(chosen);
    }
    (steps, prefix)
}

/// Recomputed per-token quantities for a trajectory under the current
/// parameters, with exact analytic gradients.
#[derive(Debug, Clone)]
pub struct TokenGrad {
    pub turn: usize,
    pub index_in_turn: usize,
    pub logprob: f64,
    pub entropy: f64,
    pub grad_logprob: Vec<f64>,
    pub grad_entropy: Vec<f64>,
}

/// Recomputes (logprob, entropy, ∇logprob, ∇entropy) for every token position
/// of `traj` under `params`. Gradients are dense vectors over θ; intended for
/// tests and small problems; the trainer uses the accumulate path instead.
pub fn logprob_entropy_grads(params: &PolicyParams, traj: &Trajectory) -> Result<Vec<TokenGrad>> {
    let mut out = Vec::with_capacity(traj.total_tokens());
    for (ti, turn) in traj.turns.iter().enumerate() {
        if turn.steps.iter().any(|s| s.probs.len() != params.feature_map.vocab_size) {
            return Err(Error::FeatureMapMismatch(format!(
                "trajectory vocab {} != policy vocab {}",
                turn.steps.first().map_or(0, |s| s.probs.len()),
                params.feature_map.vocab_size
            )));
        }
        let mut prefix: Vec<TokenId> = Vec::new();
        for (i, step) in turn.steps.iter().enumerate() {
            let probs = params.token_probs(&turn.observation, turn.observation.turn_index, &prefix);
            let mut grad_logprob = vec![0.0; params.n_params()];
            let mut grad_entropy = vec![0.0; params.n_params()];
            params.accumulate_grad(
                &mut grad_logprob,
                &turn.observation,
                turn.observation.turn_index,
                &prefix,
                &dlogits_for(&probs, step.chosen, 1.0, 0.0),
            );
            params.accumulate_grad(
                &mut grad_entropy,
                &turn.observation,
                turn.observation.turn_index,
                &prefix,
                &dlogits_for(&probs, step.chosen, 0.0, 1.0),
            );
            out.push(TokenGrad {
                turn: ti,
                index_in_turn: i,
                logprob: probs[step.chosen].ln(),
                entropy: crate::entropy::entropy_unchecked(&probs),
                grad_logprob,
                grad_entropy,
            });
            prefix.push(step.chosen);
        }
    }
    Ok(out)
}

/// Tabular value baseline over (state id, turn index), fit to Monte Carlo
/// returns. With a single terminal binary reward and no discounting the
/// return at every turn equals the episode outcome, so this is exactly a
/// per-cell running mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueBaseline {
    pub table: Vec<f64>,
    pub n_states: usize,
    pub horizon: usize,
    pub learning_rate: f64,
}

impl ValueBaseline {
    pub fn new(n_states: usize, horizon: usize, learning_rate: f64) -> Self {
        Self { table: vec![0.0; n_states * horizon], n_states, horizon, learning_rate }
    }

    fn cell(&self, state_id: usize, turn: usize) -> Option<usize> {
        if state_id < self.n_states && turn < self.horizon {
            Some(turn * self.n_states + state_id)
        } else {
            None
        }
    }

    /// Current estimate; 0 for unseen or out-of-range cells.
    pub fn value_estimate(&self, obs: &Observation, turn: usize) -> f64 {
        self.cell(obs.state_id, turn).map_or(0.0, |c| self.table[c])
    }

    /// One stochastic-approximation step per visited cell toward the batch's
    /// Monte Carlo returns. Pure: returns the updated baseline. Visits to the
    /// same cell are averaged first, so the update is order-independent.
    pub fn value_update(&self, batch_turns: &[(Observation, usize)], returns: &[f64]) -> Result<Self> {
        if batch_turns.len() != returns.len() {
            return Err(Error::MisalignedAdvantages(format!(
                "{} visited cells vs {} returns",
                batch_turns.len(),
                returns.len()
            )));
        }
        let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for ((obs, turn), &g) in batch_turns.iter().zip(returns) {
            if let Some(c) = self.cell(obs.state_id, *turn) {
                let e = sums.entry(c).or_insert((0.0, 0));
                e.0 += g;
                e.1 += 1;
            }
        }
        let mut next = self.clone();
        for (c, (sum, count)) in sums {
            let target = sum / count as f64;
            next.table[c] += self.learning_rate * (target - next.table[c]);
        }
        Ok(next)
    }
}
