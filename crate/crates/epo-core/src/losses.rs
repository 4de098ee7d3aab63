//! Objective terms for multi-turn policy optimization: the clipped surrogate
//! accumulated across turns, the trajectory-aware entropy term, the
//! band-penalty smoothing term anchored to the entropy history, the phase
//! schedule for its weight, and the combined objective
//!
//! ```text
//! l_epo = l_mt − λ (l_h − β_k · l_smooth)
//! ```
//!
//! plus the baseline variants used in comparison studies (plain PPO/GRPO,
//! entropy regularization without smoothing, a decaying entropy coefficient,
//! and entropy-shaped advantages).
//!
//! All token-level terms aggregate with the same nesting: mean over tokens
//! within a turn, mean over turns within a trajectory, mean over the batch.
//! Gradients are exact; reductions run in a fixed order so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::entropy::entropy_unchecked;
use crate::error::{Error, Result};
use crate::policy::{dlogits_for, PolicyParams};
use crate::traj::Batch;
use crate::window::EntropyWindow;

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Clipped surrogate with a value baseline; no entropy terms.
    Ppo,
    /// Clipped surrogate with group-relative advantages; no entropy terms.
    Grpo,
    /// Full objective: entropy term plus history-anchored smoothing.
    Epo,
    /// Entropy term only, constant coefficient (no smoothing).
    EpoBase,
    /// Entropy term with an exponentially decaying coefficient.
    EpoDecay,
    /// Entropy enters only as a clipped, gradient-detached advantage bonus.
    Ea,
}

impl Variant {
    pub fn uses_entropy_term(self) -> bool {
        matches!(self, Variant::Epo | Variant::EpoBase | Variant::EpoDecay)
    }

    pub fn uses_smoothing(self) -> bool {
        self == Variant::Epo
    }
}

/// How advantages are estimated for the EPO-family variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    Ppo,
    Grpo,
}

/// Whether the band penalty is the piecewise-constant indicator or its
/// gradient-carrying reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// 0 inside the band, α outside. Piecewise constant: contributes to the
    /// reported loss but carries no gradient.
    Literal,
    /// 0 inside the band; α·H above it, −α·H below it, with the band test
    /// detached. The magnitude carries a gradient pushing entropy back into
    /// the band.
    Hinge,
}

/// Every scalar of the method. Field names follow the config-file keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpoConfig {
    /// Entropy coefficient λ.
    pub lambda: f64,
    /// Band-penalty weight α.
    pub alpha: f64,
    /// Lower band coefficient κ_l.
    pub kappa_l: f64,
    /// Upper band coefficient κ_r.
    pub kappa_r: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Schedule decay rate λ_d.
    pub lambda_d: f64,
    /// Total RL steps K.
    pub total_steps: usize,
    /// Clip range ε.
    pub clip_eps: f64,
    /// GRPO stabilizer δ.
    pub grpo_delta: f64,
    /// Batch size B.
    pub batch_size: usize,
    /// GRPO group size G.
    pub group_size: usize,
    pub variant: Variant,
    pub penalty_mode: PenaltyMode,
    /// Advantage estimator for the EPO-family variants. `ppo` and `grpo`
    /// force their own.
    pub advantage_mode: AdvantageMode,
    /// Floor of the decaying coefficient (epo_decay only).
    pub lambda_lo: f64,
    /// Entropy-advantage scale ψ (ea only).
    pub psi: f64,
    /// Entropy-advantage clip c (ea only).
    pub ea_clip: f64,
    /// Reserved coefficient: parsed and echoed into run manifests but not
    /// consumed by any loss term.
    pub lambda_k: f64,
}

impl Default for EpoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            alpha: 1.0,
            kappa_l: 0.0,
            kappa_r: 2.0,
            beta_start: 2.0,
            beta_end: 1.0,
            lambda_d: 3.0,
            total_steps: 120,
            clip_eps: 0.2,
            grpo_delta: 1e-8,
            batch_size: 16,
            group_size: 4,
            variant: Variant::Epo,
            penalty_mode: PenaltyMode::Hinge,
            advantage_mode: AdvantageMode::Ppo,
            lambda_lo: 0.0,
            psi: 0.1,
            ea_clip: 0.5,
            lambda_k: 0.05,
        }
    }
}

impl EpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.alpha < 0.0 {
            return bad("alpha must be >= 0");
        }
        if !(0.0 <= self.kappa_l && self.kappa_l <= self.kappa_r) {
            return bad("band coefficients must satisfy 0 <= kappa_l <= kappa_r");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.grpo_delta <= 0.0 {
            return bad("grpo_delta must be > 0");
        }
        if self.total_steps < 2 {
            return bad("total_steps must be >= 2");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.effective_advantage_mode() == AdvantageMode::Grpo {
            if self.group_size < 2 {
                return bad("group_size must be >= 2 in grpo mode");
            }
            if !self.batch_size.is_multiple_of(self.group_size) {
                return bad("batch_size must be divisible by group_size in grpo mode");
            }
        }
        if self.lambda_lo < 0.0 || self.lambda_lo > self.lambda {
            return bad("lambda_lo must satisfy 0 <= lambda_lo <= lambda");
        }
        if self.ea_clip <= 0.0 {
            return bad("ea_clip must be > 0");
        }
        Ok(())
    }

    pub fn effective_advantage_mode(&self) -> AdvantageMode {
        match self.variant {
            Variant::Ppo => AdvantageMode::Ppo,
            Variant::Grpo => AdvantageMode::Grpo,
            _ => self.advantage_mode,
        }
    }

    /// Entropy coefficient at step k: zero for variants without an entropy
    /// term, the decayed value for `epo_decay`, λ otherwise.
    pub fn lambda_at(&self, k: usize) -> f64 {
        match self.variant {
            Variant::Ppo | Variant::Grpo | Variant::Ea => 0.0,
            Variant::EpoDecay => decay_coefficient(k, self.lambda, self.lambda_lo, self.total_steps),
            Variant::Epo | Variant::EpoBase => self.lambda,
        }
    }
}

/// Per-token advantages aligned with a batch: `values[j][t][i]`.
#[derive(Debug, Clone)]
pub struct Advantages {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl Advantages {
    /// Broadcasts one advantage per (trajectory, turn) across that turn's
    /// tokens.
    pub fn from_per_turn(per_turn: &[Vec<f64>], batch: &Batch) -> Result<Self> {
        if per_turn.len() != batch.len() {
            return Err(Error::MisalignedAdvantages(format!(
                "{} trajectories vs {} advantage rows",
                batch.len(),
                per_turn.len()
            )));
        }
        let mut values = Vec::with_capacity(batch.len());
        for (traj, row) in batch.trajectories.iter().zip(per_turn) {
            if row.len() != traj.turns.len() {
                return Err(Error::MisalignedAdvantages(format!(
                    "trajectory has {} turns but {} advantages",
                    traj.turns.len(),
                    row.len()
                )));
            }
            values.push(
                traj.turns
                    .iter()
                    .zip(row)
                    .map(|(turn, &a)| vec![a; turn.steps.len()])
                    .collect(),
            );
        }
        Ok(Self { values })
    }

    /// Broadcasts one advantage per trajectory across all its tokens.
    pub fn from_per_trajectory(per_traj: &[f64], batch: &Batch) -> Result<Self> {
        let rows: Vec<Vec<f64>> = batch
            .trajectories
            .iter()
            .zip(per_traj)
            .map(|(traj, &a)| vec![a; traj.turns.len()])
            .collect();
        if rows.len() != batch.len() {
            return Err(Error::MisalignedAdvantages(format!(
                "{} trajectories vs {} advantages",
                batch.len(),
                per_traj.len()
            )));
        }
        Self::from_per_turn(&rows, batch)
    }

    pub fn validate(&self, batch: &Batch) -> Result<()> {
        if self.values.len() != batch.len() {
            return Err(Error::MisalignedAdvantages("trajectory count mismatch".into()));
        }
        for (traj, rows) in batch.trajectories.iter().zip(&self.values) {
            if rows.len() != traj.turns.len() {
                return Err(Error::MisalignedAdvantages("turn count mismatch".into()));
            }
            for (turn, row) in traj.turns.iter().zip(rows) {
                if row.len() != turn.steps.len() {
                    return Err(Error::MisalignedAdvantages("token count mismatch".into()));
                }
            }
        }
        Ok(())
    }
}

/// The clipped surrogate objective at one token position:
/// min(r·A, clip(r, 1−ε, 1+ε)·A) with r = exp(logp_new − logp_old).
/// The loss is its negation.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> Result<f64> {
    let ratio = (logp_new - logp_old).exp();
    if !ratio.is_finite() {
        return Err(Error::NonFiniteLoss {
            k: 0,
            detail: format!("importance ratio exp({logp_new} - {logp_old}) is not finite"),
        });
    }
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Negated clipped surrogate, nested-mean over (trajectory, turn, token),
/// with its exact gradient with respect to the current parameters.
/// Old log-probabilities are the ones recorded at rollout.
pub fn multi_turn_policy_loss(
    batch: &Batch,
    advantages: &Advantages,
    params: &PolicyParams,
    clip_eps: f64,
) -> Result<(f64, Vec<f64>)> {
    advantages.validate(batch)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.n_params()];
    let b = batch.len() as f64;
    for (traj, adv_rows) in batch.trajectories.iter().zip(&advantages.values) {
        let t_count = traj.turns.len() as f64;
        for (turn, adv_row) in traj.turns.iter().zip(adv_rows) {
            let weight = 1.0 / (b * t_count * turn.steps.len() as f64);
            let mut prefix = Vec::with_capacity(turn.steps.len());
            for (step, &a) in turn.steps.iter().zip(adv_row) {
                let probs =
                    params.token_probs(&turn.observation, turn.observation.turn_index, &prefix);
                let logp_new = probs[step.chosen].ln();
                let ratio = (logp_new - step.logprob).exp();
                if !ratio.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        k: batch.rl_step,
                        detail: "non-finite importance ratio".into(),
                    });
                }
                let unclipped = ratio * a;
                let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
                let surrogate = unclipped.min(clipped);
                loss -= weight * surrogate;
                // d surrogate / d logp_new = r·A on the unclipped branch and 0
                // where the clip saturates (ties resolve to the unclipped side).
                if unclipped <= clipped {
                    let c_lp = -weight * unclipped;
                    params.accumulate_grad(
                        &mut grad,
                        &turn.observation,
                        turn.observation.turn_index,
                        &prefix,
                        &dlogits_for(&probs, step.chosen, c_lp, 0.0),
                    );
                }
                prefix.push(step.chosen);
            }
        }
    }
    Ok((loss, grad))
}

/// Per-(trajectory, turn) advantages r_T − V(s_t, t) for the sparse terminal
/// reward, undiscounted case.
pub fn ppo_advantage(batch: &Batch, baseline: &crate::policy::ValueBaseline) -> Vec<Vec<f64>> {
    batch
        .trajectories
        .iter()
        .map(|traj| {
            let r = traj.reward_f64();
            traj.turns
                .iter()
                .map(|turn| r - baseline.value_estimate(&turn.observation, turn.observation.turn_index))
                .collect()
        })
        .collect()
}

/// Group-relative advantages (R − μ_g)/(σ_g + δ) with population standard
/// deviation; one value per trajectory in the group.
pub fn grpo_advantage(group_returns: &[f64], delta: f64) -> Result<Vec<f64>> {
    let n = group_returns.len();
    if n < 2 {
        return Err(Error::GroupTooSmall(n));
    }
    let mean = group_returns.iter().sum::<f64>() / n as f64;
    let var = group_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    Ok(group_returns.iter().map(|r| (r - mean) / (sigma + delta)).collect())
}

/// Applies [`grpo_advantage`] to each contiguous group of a batch.
pub fn grpo_advantages_for_batch(batch: &Batch, group_size: usize, delta: f64) -> Result<Vec<f64>> {
    batch.validate_groups(group_size)?;
    let mut out = Vec::with_capacity(batch.len());
    for group in batch.trajectories.chunks(group_size) {
        let returns: Vec<f64> = group.iter().map(|t| t.reward_f64()).collect();
        out.extend(grpo_advantage(&returns, delta)?);
    }
    Ok(out)
}

/// Trajectory-aware entropy term: nested mean of current-policy token
/// entropies, with its exact gradient.
pub fn entropy_loss(batch: &Batch, params: &PolicyParams) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; params.n_params()];
    let b = batch.len() as f64;
    for traj in &batch.trajectories {
        let t_count = traj.turns.len() as f64;
        for turn in &traj.turns {
            let weight = 1.0 / (b * t_count * turn.steps.len() as f64);
            let mut prefix = Vec::with_capacity(turn.steps.len());
            for step in &turn.steps {
                let probs =
                    params.token_probs(&turn.observation, turn.observation.turn_index, &prefix);
                value += weight * entropy_unchecked(&probs);
                params.accumulate_grad(
                    &mut grad,
                    &turn.observation,
                    turn.observation.turn_index,
                    &prefix,
                    &dlogits_for(&probs, step.chosen, 0.0, weight),
                );
                prefix.push(step.chosen);
            }
        }
    }
    Ok((value, grad))
}

/// Token-wise band penalty against the historical reference `h_ref`.
/// Returns the penalty value; boundaries are inclusive, so entropies exactly
/// on a band edge incur nothing.
pub fn penalty(h: f64, h_ref: f64, kappa_l: f64, kappa_r: f64, alpha: f64, mode: PenaltyMode) -> Result<f64> {
    Ok(penalty_with_slope(h, h_ref, kappa_l, kappa_r, alpha, mode)?.0)
}

/// Penalty value, d(value)/dH for the gradient-carrying reading, and whether
/// the entropy sat inside the band.
pub(crate) fn penalty_with_slope(
    h: f64,
    h_ref: f64,
    kappa_l: f64,
    kappa_r: f64,
    alpha: f64,
    mode: PenaltyMode,
) -> Result<(f64, f64, bool)> {
    if alpha < 0.0 {
        return Err(Error::InvalidConfig("penalty weight alpha must be >= 0".into()));
    }
    let lo = kappa_l * h_ref;
    let hi = kappa_r * h_ref;
    if (lo..=hi).contains(&h) {
        return Ok((0.0, 0.0, true));
    }
    match mode {
        PenaltyMode::Literal => Ok((alpha, 0.0, false)),
        PenaltyMode::Hinge => {
            if h > hi {
                Ok((alpha * h, alpha, false))
            } else {
                Ok((-alpha * h, -alpha, false))
            }
        }
    }
}

/// Nested-mean aggregation of token penalties against `h_ref`, with the
/// gradient of the hinge reading (identically zero in literal mode). Also
/// reports how many tokens fell outside the band.
pub fn smoothing_loss(
    batch: &Batch,
    params: &PolicyParams,
    h_ref: f64,
    kappa_l: f64,
    kappa_r: f64,
    alpha: f64,
    mode: PenaltyMode,
) -> Result<(f64, Vec<f64>, usize)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; params.n_params()];
    let mut out_of_band = 0usize;
    let b = batch.len() as f64;
    for traj in &batch.trajectories {
        let t_count = traj.turns.len() as f64;
        for turn in &traj.turns {
            let weight = 1.0 / (b * t_count * turn.steps.len() as f64);
            let mut prefix = Vec::with_capacity(turn.steps.len());
            for step in &turn.steps {
                let probs =
                    params.token_probs(&turn.observation, turn.observation.turn_index, &prefix);
                let h = entropy_unchecked(&probs);
                let (p, slope, in_band) = penalty_with_slope(h, h_ref, kappa_l, kappa_r, alpha, mode)?;
                if !in_band {
                    out_of_band += 1;
                }
                value += weight * p;
                if slope != 0.0 {
                    params.accumulate_grad(
                        &mut grad,
                        &turn.observation,
                        turn.observation.turn_index,
                        &prefix,
                        &dlogits_for(&probs, step.chosen, 0.0, weight * slope),
                    );
                }
                prefix.push(step.chosen);
            }
        }
    }
    Ok((value, grad, out_of_band))
}

/// The phase schedule for the smoothing weight: both branches exactly as
/// specified, with k_mid = ⌊K/2⌋. Discontinuous at k_mid for general
/// parameters; no smoothing of the schedule is applied.
pub fn beta_schedule(k: usize, cfg: &EpoConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if k >= total {
        return Err(Error::StepOutOfRange { k, total });
    }
    let k_mid = total / 2;
    let beta = if k <= k_mid {
        cfg.beta_start
            + (1.0 - cfg.beta_start) * (1.0 - (-cfg.lambda_d * k as f64 / k_mid as f64).exp())
    } else {
        1.0 + (cfg.beta_end - 1.0)
            * (1.0 - (-cfg.lambda_d * (k - k_mid) as f64 / (total - k_mid) as f64).exp())
    };
    Ok(beta)
}

/// Exponentially decaying entropy coefficient used by the `epo_decay`
/// variant: λ(k) = λ_lo + (λ_hi − λ_lo) e^{−3k/K}.
pub fn decay_coefficient(k: usize, lambda_hi: f64, lambda_lo: f64, total_steps: usize) -> f64 {
    lambda_lo + (lambda_hi - lambda_lo) * (-3.0 * k as f64 / total_steps as f64).exp()
}

/// Entropy-shaped advantage: Ã = A + clip(ψ·H, −c, c) with the entropy
/// entering as a constant (no gradient flows through it).
pub fn ea_shaped_advantage(advantage: f64, token_entropy: f64, psi: f64, c: f64) -> f64 {
    advantage + (psi * token_entropy).clamp(-c, c)
}

/// Everything a training step needs to know about one loss evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub l_mt: f64,
    pub l_h: f64,
    pub l_smooth: f64,
    pub beta_k: f64,
    pub l_epo: f64,
    /// Entropy coefficient actually applied at this step.
    pub lambda_eff: f64,
    /// Tokens whose entropy fell outside the band.
    pub penalty_count: usize,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.l_mt.is_finite()
            && self.l_h.is_finite()
            && self.l_smooth.is_finite()
            && self.l_epo.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Combines the component losses into the full objective for the configured
/// variant at RL step `k`. At k = 0 the smoothing term is exactly zero; the
/// window is only consulted when k > 0 and the variant smooths.
pub fn epo_loss(
    batch: &Batch,
    advantages: &Advantages,
    window: &EntropyWindow,
    k: usize,
    params: &PolicyParams,
    cfg: &EpoConfig,
) -> Result<LossReport> {
    let lambda_eff = cfg.lambda_at(k);
    let beta_k = beta_schedule(k, cfg)?;
    let (l_mt, grad_mt) = multi_turn_policy_loss(batch, advantages, params, cfg.clip_eps)?;
    let (l_h, grad_h) = entropy_loss(batch, params)?;

    let (l_smooth, grad_smooth, penalty_count) = if cfg.variant.uses_smoothing() && k > 0 {
        let h_ref = window.historical_mean()?;
        smoothing_loss(batch, params, h_ref, cfg.kappa_l, cfg.kappa_r, cfg.alpha, cfg.penalty_mode)?
    } else {
        (0.0, vec![0.0; params.n_params()], 0)
    };

    let l_epo = l_mt - lambda_eff * (l_h - beta_k * l_smooth);
    let mut grad = grad_mt;
    if lambda_eff != 0.0 {
        for ((g, gh), gs) in grad.iter_mut().zip(&grad_h).zip(&grad_smooth) {
            *g -= lambda_eff * (gh - beta_k * gs);
        }
    }
    Ok(LossReport { l_mt, l_h, l_smooth, beta_k, l_epo, lambda_eff, penalty_count, grad })
}
