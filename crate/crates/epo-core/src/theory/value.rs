//! Policies over enumerated MDPs, exact values of the plain / entropy /
//! smoothing-augmented objectives, their exact gradients, and the gradient
//! ascent used to locate regularized optima.
//!
//! Policies are time-indexed: finite-horizon optima are generally
//! non-stationary, and a stationary restriction would break the optimality
//! arguments the verifier checks. The softmax class therefore has one logit
//! row per (step, state).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdp::MdpSpec;
use crate::entropy::entropy_unchecked;
use crate::error::Result;
use crate::losses::{penalty_with_slope, PenaltyMode};
use crate::policy::softmax;

/// Time-indexed tabular softmax policy: logits[(t * S + s) * A + a].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn n_params(mdp: &MdpSpec) -> usize {
        mdp.horizon * mdp.n_states * mdp.n_actions
    }

    pub fn uniform(mdp: &MdpSpec) -> Self {
        Self { logits: vec![0.0; Self::n_params(mdp)] }
    }

    pub fn random<R: Rng>(mdp: &MdpSpec, scale: f64, rng: &mut R) -> Self {
        let logits = (0..Self::n_params(mdp))
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        Self { logits }
    }

    fn row(&self, mdp: &MdpSpec, t: usize, s: usize) -> &[f64] {
        let base = (t * mdp.n_states + s) * mdp.n_actions;
        &self.logits[base..base + mdp.n_actions]
    }

    pub fn to_table(&self, mdp: &MdpSpec) -> PolicyTable {
        let mut probs = Vec::with_capacity(Self::n_params(mdp));
        for t in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                probs.extend(softmax(self.row(mdp, t, s)));
            }
        }
        PolicyTable { probs, n_states: mdp.n_states, n_actions: mdp.n_actions }
    }
}

/// Explicit action probabilities per (step, state). Unlike the softmax class
/// this can carry exact zeros, which is what the optimal-policy constructions
/// need.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub probs: Vec<f64>,
    n_states: usize,
    n_actions: usize,
}

impl PolicyTable {
    pub fn probs_at(&self, t: usize, s: usize) -> &[f64] {
        let base = (t * self.n_states + s) * self.n_actions;
        &self.probs[base..base + self.n_actions]
    }

    pub fn entropy_at(&self, t: usize, s: usize) -> f64 {
        entropy_unchecked(self.probs_at(t, s))
    }

    /// Deterministic policy following the lexicographically-first optimal
    /// action at every (t, s) (ties broken toward lower action index).
    pub fn deterministic_optimal(mdp: &MdpSpec, tie_tol: f64) -> Self {
        let (_, values, _) = mdp.optimal_by_dp(tie_tol);
        let mut probs = vec![0.0; mdp.horizon * mdp.n_states * mdp.n_actions];
        for t in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                let best = values[t][s];
                let a = (0..mdp.n_actions)
                    .find(|&a| {
                        mdp.rewards[s][a] + values[t + 1][mdp.transitions[s][a]] >= best - tie_tol
                    })
                    .expect("some action attains the DP optimum");
                probs[(t * mdp.n_states + s) * mdp.n_actions + a] = 1.0;
            }
        }
        Self { probs, n_states: mdp.n_states, n_actions: mdp.n_actions }
    }

    /// The maximum-entropy optimal policy: uniform over the optimal action
    /// sequences, realized through the DP suffix counts. Its trajectory
    /// entropy is exactly ln |A*_H(s0)|.
    pub fn uniform_over_optimal(mdp: &MdpSpec, tie_tol: f64) -> Self {
        let (_, values, counts) = mdp.optimal_by_dp(tie_tol);
        let mut probs = vec![0.0; mdp.horizon * mdp.n_states * mdp.n_actions];
        for t in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                let best = values[t][s];
                let total = counts[t][s] as f64;
                for a in 0..mdp.n_actions {
                    let next = mdp.transitions[s][a];
                    if mdp.rewards[s][a] + values[t + 1][next] >= best - tie_tol {
                        probs[(t * mdp.n_states + s) * mdp.n_actions + a] =
                            counts[t + 1][next] as f64 / total;
                    }
                }
            }
        }
        Self { probs, n_states: mdp.n_states, n_actions: mdp.n_actions }
    }
}

/// Band-penalty parameters for the smoothing term inside the augmented
/// objective; the penalty itself is the losses module's.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub h_ref: f64,
    pub kappa_l: f64,
    pub kappa_r: f64,
    pub alpha: f64,
    pub mode: PenaltyMode,
}

impl SmoothingSpec {
    pub fn wide_band() -> Self {
        Self { h_ref: 1.0, kappa_l: 0.0, kappa_r: 1e9, alpha: 1.0, mode: PenaltyMode::Hinge }
    }

    fn value_and_slope(&self, h: f64) -> (f64, f64) {
        let (v, slope, _) =
            penalty_with_slope(h, self.h_ref, self.kappa_l, self.kappa_r, self.alpha, self.mode)
                .expect("alpha validated at construction");
        (v, slope)
    }
}

/// The three objective values at the initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTriple {
    pub v: f64,
    pub v_lambda: f64,
    pub v_lambda_beta: f64,
    /// Trajectory entropy −Σ_τ p(τ) ln p(τ).
    pub trajectory_entropy: f64,
    /// Expected per-step-mean smoothing penalty E[(1/H) Σ_t P_t].
    pub expected_smooth: f64,
}

/// Exhaustive-enumeration evaluation of V, V_λ = V + λH(π), and
/// V_{λ,β} = V + λH(π) − λβ E[L_smooth] for any policy table.
pub fn exact_value_table(
    mdp: &MdpSpec,
    table: &PolicyTable,
    lambda: f64,
    beta: f64,
    smoothing: &SmoothingSpec,
) -> Result<ValueTriple> {
    mdp.validate()?;
    let h = mdp.horizon as f64;
    let mut v = 0.0;
    let mut traj_entropy = 0.0;
    let mut expected_smooth = 0.0;
    for path in mdp.enumerate_paths() {
        let mut prob = 1.0;
        let mut smooth = 0.0;
        for (t, (&s, &a)) in path.states.iter().zip(&path.actions).enumerate() {
            prob *= table.probs_at(t, s)[a];
            if prob == 0.0 {
                break;
            }
            smooth += self_penalty(table, smoothing, t, s) / h;
        }
        if prob == 0.0 {
            continue;
        }
        v += prob * path.ret;
        traj_entropy -= prob * prob.ln();
        expected_smooth += prob * smooth;
    }
    Ok(ValueTriple {
        v,
        v_lambda: v + lambda * traj_entropy,
        v_lambda_beta: v + lambda * traj_entropy - lambda * beta * expected_smooth,
        trajectory_entropy: traj_entropy,
        expected_smooth,
    })
}

fn self_penalty(table: &PolicyTable, smoothing: &SmoothingSpec, t: usize, s: usize) -> f64 {
    smoothing.value_and_slope(table.entropy_at(t, s)).0
}

/// Softmax-policy wrapper around [`exact_value_table`]; this is the public
/// evaluation route for parameterized policies.
pub fn exact_value(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    lambda: f64,
    beta: f64,
    smoothing: &SmoothingSpec,
) -> Result<ValueTriple> {
    exact_value_table(mdp, &policy.to_table(mdp), lambda, beta, smoothing)
}

/// Backward-induction route to the same augmented value: per-state bonus
/// b_t(s) = λ H(π_t(·|s)) − (λβ/H) P(H(π_t(·|s))) added at every visit.
/// Independent of the path enumeration; used as its oracle.
pub fn dp_value_table(
    mdp: &MdpSpec,
    table: &PolicyTable,
    lambda: f64,
    beta: f64,
    smoothing: &SmoothingSpec,
) -> f64 {
    let h = mdp.horizon as f64;
    let mut next = vec![0.0; mdp.n_states];
    for t in (0..mdp.horizon).rev() {
        let mut cur = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let probs = table.probs_at(t, s);
            let ent = entropy_unchecked(probs);
            let mut val = lambda * ent - lambda * beta * smoothing.value_and_slope(ent).0 / h;
            for (a, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    val += p * (mdp.rewards[s][a] + next[mdp.transitions[s][a]]);
                }
            }
            cur[s] = val;
        }
        next = cur;
    }
    next[mdp.initial_state]
}

/// State-visitation probabilities P_t(s) under a policy table.
pub fn visitation(mdp: &MdpSpec, table: &PolicyTable) -> Vec<Vec<f64>> {
    let mut dist = vec![vec![0.0; mdp.n_states]; mdp.horizon];
    dist[0][mdp.initial_state] = 1.0;
    for t in 0..mdp.horizon - 1 {
        for s in 0..mdp.n_states {
            let p_s = dist[t][s];
            if p_s == 0.0 {
                continue;
            }
            for (a, &pa) in table.probs_at(t, s).iter().enumerate() {
                dist[t + 1][mdp.transitions[s][a]] += p_s * pa;
            }
        }
    }
    dist
}

/// Exact gradient of V_{λ,β} with respect to the softmax logits, by backward
/// recursion. With λ = β = 0 this is the plain policy gradient; with β = 0
/// the entropy-regularized one.
pub fn grad_value(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    lambda: f64,
    beta: f64,
    smoothing: &SmoothingSpec,
) -> Vec<f64> {
    let n = TabularPolicy::n_params(mdp);
    let table = policy.to_table(mdp);
    let h = mdp.horizon as f64;
    // Scalar values V_t(s) of the augmented objective.
    let mut values = vec![vec![0.0; mdp.n_states]; mdp.horizon + 1];
    for t in (0..mdp.horizon).rev() {
        for s in 0..mdp.n_states {
            let probs = table.probs_at(t, s);
            let ent = entropy_unchecked(probs);
            let mut val = lambda * ent - lambda * beta * smoothing.value_and_slope(ent).0 / h;
            for (a, &p) in probs.iter().enumerate() {
                val += p * (mdp.rewards[s][a] + values[t + 1][mdp.transitions[s][a]]);
            }
            values[t][s] = val;
        }
    }
    // Gradient vectors G_t(s) = ∇θ V_t(s), built bottom-up.
    let mut next: Vec<Vec<f64>> = vec![vec![0.0; n]; mdp.n_states];
    for t in (0..mdp.horizon).rev() {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; n]; mdp.n_states];
        for s in 0..mdp.n_states {
            let probs = table.probs_at(t, s);
            let ent = entropy_unchecked(probs);
            let (_, slope) = SmoothingSpec::value_and_slope(smoothing, ent);
            let c_bonus = lambda - lambda * beta * slope / h;
            let q: Vec<f64> = (0..mdp.n_actions)
                .map(|a| mdp.rewards[s][a] + values[t + 1][mdp.transitions[s][a]])
                .collect();
            let q_bar: f64 = probs.iter().zip(&q).map(|(p, qa)| p * qa).sum();
            let g = &mut cur[s];
            // Successor gradients flow through the action distribution.
            for (a, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    let child = &next[mdp.transitions[s][a]];
                    for (gi, ci) in g.iter_mut().zip(child) {
                        *gi += p * ci;
                    }
                }
            }
            // Local row: ∂/∂z_v of Σ_a π(a) q_a plus the entropy-dependent bonus.
            let base = (t * mdp.n_states + s) * mdp.n_actions;
            for (v, &p) in probs.iter().enumerate() {
                let d_policy = p * (q[v] - q_bar);
                let d_entropy = if p > 0.0 { -p * (p.ln() + ent) } else { 0.0 };
                g[base + v] += d_policy + c_bonus * d_entropy;
            }
        }
        next = cur;
    }
    std::mem::take(&mut next[mdp.initial_state])
}

/// Soft backward induction: the exact optimum of V_λ over all policies,
/// V_t(s) = λ ln Σ_a exp((r + V_{t+1})/λ). Closed-form oracle for the
/// ascent optimizer.
pub fn soft_optimal_value(mdp: &MdpSpec, lambda: f64) -> f64 {
    let mut next = vec![0.0; mdp.n_states];
    for _t in (0..mdp.horizon).rev() {
        let mut cur = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let q: Vec<f64> = (0..mdp.n_actions)
                .map(|a| (mdp.rewards[s][a] + next[mdp.transitions[s][a]]) / lambda)
                .collect();
            let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + q.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            cur[s] = lambda * lse;
        }
        next = cur;
    }
    next[mdp.initial_state]
}

/// Result of a gradient-ascent search for a regularized optimum.
#[derive(Debug, Clone)]
pub struct AscentResult {
    pub policy: TabularPolicy,
    pub value: f64,
    pub grad_norm: f64,
}

/// Maximizes V_{λ,β} by gradient ascent with backtracking line search from
/// `restarts` random initializations (plus the uniform one), keeping the
/// best final value. Stops each run once the gradient norm reaches `tol`.
#[allow(clippy::too_many_arguments)]
pub fn ascend(
    mdp: &MdpSpec,
    lambda: f64,
    beta: f64,
    smoothing: &SmoothingSpec,
    restarts: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<AscentResult> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<AscentResult> = None;
    for restart in 0..=restarts {
        let mut policy = if restart == 0 {
            TabularPolicy::uniform(mdp)
        } else {
            TabularPolicy::random(mdp, 1.5, &mut rng)
        };
        let mut value = exact_value(mdp, &policy, lambda, beta, smoothing)?.v_lambda_beta;
        let mut step = 1.0;
        for _ in 0..max_iters {
            let grad = grad_value(mdp, &policy, lambda, beta, smoothing);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm <= tol {
                break;
            }
            // Backtracking line search on the ascent direction.
            let mut accepted = false;
            let mut trial = step * 2.0;
            while trial > 1e-14 {
                let mut cand = policy.clone();
                for (w, g) in cand.logits.iter_mut().zip(&grad) {
                    *w += trial * g;
                }
                let cand_value =
                    exact_value(mdp, &cand, lambda, beta, smoothing)?.v_lambda_beta;
                if cand_value >= value + 1e-10 * trial * norm * norm {
                    policy = cand;
                    value = cand_value;
                    step = trial;
                    accepted = true;
                    break;
                }
                trial *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let grad = grad_value(mdp, &policy, lambda, beta, smoothing);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let candidate = AscentResult { policy, value, grad_norm };
        best = match best {
            Some(b) if b.value >= candidate.value => Some(b),
            _ => Some(candidate),
        };
    }
    Ok(best.expect("at least one restart ran"))
}
