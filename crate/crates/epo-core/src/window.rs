//! Entropy history window: the batch-mean entropies of all completed RL
//! steps and their running mean, which anchors the smoothing band.
//!
//! Default capacity is unbounded (the historical reference averages over
//! every prior step), with an optional bounded mode for ablations.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyWindow {
    history: VecDeque<f64>,
    capacity: Option<usize>,
}

impl Default for EntropyWindow {
    fn default() -> Self {
        Self::unbounded()
    }
}

impl EntropyWindow {
    pub fn unbounded() -> Self {
        Self { history: VecDeque::new(), capacity: None }
    }

    pub fn bounded(capacity: usize) -> Self {
        Self { history: VecDeque::new(), capacity: Some(capacity.max(1)) }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// Appends a batch-mean entropy, evicting the oldest entry when bounded.
    pub fn push(&mut self, h: f64) -> Result<()> {
        if !h.is_finite() || h < 0.0 {
            return Err(Error::NegativeEntropy(h));
        }
        if let Some(cap) = self.capacity {
            if self.history.len() == cap {
                self.history.pop_front();
            }
        }
        self.history.push_back(h);
        Ok(())
    }

    /// Arithmetic mean of the stored entries. Callers must branch on the
    /// k > 0 guard themselves: the first RL step has no history.
    pub fn historical_mean(&self) -> Result<f64> {
        if self.history.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(self.history.iter().sum::<f64>() / self.history.len() as f64)
    }
}
