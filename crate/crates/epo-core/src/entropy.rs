//! Shannon-entropy primitives over token distributions, trajectories, and
//! batches. Everything is in nats.
//!
//! The canonical aggregation is the nested mean: mean over turns of the mean
//! over tokens, then mean over trajectories. A flat token mean is available
//! only as a labeled diagnostic because it differs whenever turn lengths are
//! unequal.

use crate::error::{Error, Result};
use crate::traj::{Batch, Trajectory};

/// Checks that `probs` is a probability vector: nonnegative entries summing
/// to one within 1e-9.
pub fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::InvalidDistribution(
            "entries must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sum {sum} != 1")));
    }
    Ok(())
}

/// Shannon entropy −Σ p ln p with 0·ln 0 := 0, so one-hot vectors are legal.
pub fn token_entropy(probs: &[f64]) -> Result<f64> {
    validate_probs(probs)?;
    Ok(entropy_unchecked(probs))
}

/// Entropy of an already-validated distribution.
pub fn entropy_unchecked(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Mean over turns of the mean over tokens of recorded per-token entropies:
/// (1/T) Σ_t (1/|τ_t|) Σ_i H_{t,i} for one trajectory.
pub fn trajectory_mean_entropy(traj: &Trajectory) -> Result<f64> {
    if traj.turns.is_empty() || traj.turns.iter().any(|t| t.steps.is_empty()) {
        return Err(Error::EmptyTrajectory);
    }
    let turn_means = traj.turns.iter().map(|turn| {
        turn.steps.iter().map(|s| s.entropy).sum::<f64>() / turn.steps.len() as f64
    });
    Ok(turn_means.sum::<f64>() / traj.turns.len() as f64)
}

/// Flat mean over every token in the trajectory, ignoring turn boundaries.
/// Diagnostic only; equals the nested mean exactly when all turns have equal
/// token counts.
pub fn flat_token_mean_entropy(traj: &Trajectory) -> Result<f64> {
    if traj.turns.is_empty() || traj.turns.iter().any(|t| t.steps.is_empty()) {
        return Err(Error::EmptyTrajectory);
    }
    let (sum, count) = traj
        .turns
        .iter()
        .flat_map(|t| t.steps.iter())
        .fold((0.0, 0usize), |(s, c), step| (s + step.entropy, c + 1));
    Ok(sum / count as f64)
}

/// Mean over trajectories of [`trajectory_mean_entropy`]. This is the value
/// the entropy window stores per RL step.
pub fn batch_mean_entropy(batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for traj in &batch.trajectories {
        total += trajectory_mean_entropy(traj)?;
    }
    Ok(total / batch.len() as f64)
}
