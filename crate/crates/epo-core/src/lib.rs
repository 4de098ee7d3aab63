//! A desk-scale laboratory for entropy-regularized policy optimization on
//! multi-turn tasks with sparse terminal rewards.
//!
//! The crate provides:
//!
//! * trajectory/batch types and entropy primitives ([`traj`], [`entropy`]);
//! * two deterministic toy environments built around the cascade-failure
//!   regime: a hidden-command chain and a key-then-door grid ([`env`]);
//! * softmax token policies with exact analytic gradients ([`policy`]);
//! * the full loss stack (clipped surrogate across turns, trajectory-aware
//!   entropy, history-anchored smoothing penalty, phase-scheduled weighting)
//!   plus the baseline variants ([`losses`], [`window`]);
//! * a deterministic trainer with JSONL metrics and resumable checkpoints
//!   ([`trainer`]);
//! * a numerical verifier for the performance-difference identity, the
//!   entropy-gradient formula, and the entropy-bias/performance bounds on
//!   exhaustively enumerated tabular MDPs ([`theory`]).

pub mod entropy;
pub mod env;
pub mod error;
pub mod losses;
pub mod policy;
pub mod theory;
pub mod traj;
pub mod trainer;
pub mod window;

pub use error::{Error, Result};
