//! The training loop: collect a batch under the current policy, estimate
//! advantages, evaluate the combined loss, take one plain gradient step,
//! update the value baseline (PPO mode), push the batch-mean entropy into the
//! history window, and record metrics.
//!
//! Everything is a deterministic function of (config, seed): per-trajectory
//! RNG streams derive from (root seed, step, trajectory index), reductions
//! run in a fixed order, and greedy evaluation has no randomness at all.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::batch_mean_entropy;
use crate::env::{Environment, Split};
use crate::error::{Error, Result};
use crate::losses::{
    ea_shaped_advantage, epo_loss, grpo_advantages_for_batch, ppo_advantage, Advantages,
    AdvantageMode, EpoConfig, Variant,
};
use crate::policy::{act, FeatureMap, PolicyParams, Sampling, ScorerKind, ValueBaseline};
use crate::traj::{Batch, TaskId, Trajectory, Turn};
use crate::window::EntropyWindow;

/// Trainer knobs on top of the loss configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epo: EpoConfig,
    /// Constant step size for the plain gradient descent update.
    pub step_size: f64,
    /// Evaluate IID/OOD success every this many steps.
    pub eval_every: usize,
    /// Greedy episodes per evaluation split.
    pub eval_episodes: usize,
    /// Fraction of evaluations averaged into the tail success metric.
    pub tail_fraction: f64,
    /// Token count for the early-vs-late entropy diagnostic.
    pub early_late_tokens: usize,
    /// Checkpoint cadence in steps.
    pub checkpoint_every: usize,
    pub scorer: ScorerKind,
    pub prefix_buckets: usize,
    pub feature_dim: usize,
    pub value_learning_rate: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epo: EpoConfig::default(),
            step_size: 2.0,
            eval_every: 5,
            eval_episodes: 8,
            tail_fraction: 0.25,
            early_late_tokens: 10,
            checkpoint_every: 50,
            scorer: ScorerKind::Tabular,
            prefix_buckets: 4,
            feature_dim: 24,
            value_learning_rate: 0.2,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.epo.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.step_size <= 0.0 {
            return bad("step_size must be > 0");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be >= 1");
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return bad("tail_fraction must lie in (0, 1]");
        }
        if self.early_late_tokens == 0 {
            return bad("early_late_tokens must be >= 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1");
        }
        if self.value_learning_rate < 0.0 {
            return bad("value_learning_rate must be >= 0");
        }
        Ok(())
    }
}

/// One line of the metrics stream. Success rates are present only on
/// evaluation steps. Wall-clock timing is excluded from serialization so
/// metrics files stay byte-identical across reruns; it goes to the separate
/// timing stream instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub k: usize,
    pub train_mean_reward: f64,
    pub l_mt: f64,
    pub l_h: f64,
    pub l_smooth: f64,
    pub beta_k: f64,
    pub l_epo: f64,
    pub batch_mean_entropy: f64,
    pub early_token_entropy: f64,
    pub late_token_entropy: f64,
    pub penalty_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iid_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood_success: Option<f64>,
    #[serde(skip_serializing, default)]
    pub wall_clock_ms: f64,
}

/// Mutable training state for one run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub params: PolicyParams,
    pub baseline: ValueBaseline,
    pub window: EntropyWindow,
    pub k: usize,
    pub rng_root: u64,
    pub metrics: Vec<MetricsRecord>,
}

/// Resumable snapshot of a run (everything except accumulated metrics).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub baseline: ValueBaseline,
    pub window: EntropyWindow,
    pub k: usize,
    pub rng_root: u64,
}

impl RunState {
    pub fn init(env: &dyn Environment, cfg: &TrainerConfig, rng_root: u64) -> Self {
        let fm = FeatureMap::for_env(env.spec(), cfg.prefix_buckets, cfg.feature_dim);
        let params = PolicyParams::zeros(cfg.scorer, fm);
        let baseline = ValueBaseline::new(
            env.spec().state_count,
            env.spec().horizon + 1,
            cfg.value_learning_rate,
        );
        Self {
            params,
            baseline,
            window: EntropyWindow::unbounded(),
            k: 0,
            rng_root,
            metrics: Vec::new(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            baseline: self.baseline.clone(),
            window: self.window.clone(),
            k: self.k,
            rng_root: self.rng_root,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        Self {
            params: c.params,
            baseline: c.baseline,
            window: c.window,
            k: c.k,
            rng_root: c.rng_root,
            metrics: Vec::new(),
        }
    }

    /// One full step of the training loop; appends a metrics record.
    pub fn train_step(&mut self, env: &dyn Environment, cfg: &TrainerConfig) -> Result<()> {
        if self.k >= cfg.epo.total_steps {
            return Err(Error::StepOutOfRange { k: self.k, total: cfg.epo.total_steps });
        }
        let started = Instant::now();
        let k = self.k;
        let batch = collect_batch(self, env, cfg.epo.batch_size, &cfg.epo)?;
        let h_bar = batch_mean_entropy(&batch)?;

        let advantages = compute_advantages(&batch, &self.baseline, &cfg.epo)?;
        let report = epo_loss(&batch, &advantages, &self.window, k, &self.params, &cfg.epo)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                k,
                detail: format!(
                    "l_mt={} l_h={} l_smooth={} l_epo={}",
                    report.l_mt, report.l_h, report.l_smooth, report.l_epo
                ),
            });
        }

        for (w, g) in self.params.weights.iter_mut().zip(&report.grad) {
            *w -= cfg.step_size * g;
        }

        if cfg.epo.effective_advantage_mode() == AdvantageMode::Ppo {
            let mut visits = Vec::new();
            let mut returns = Vec::new();
            for traj in &batch.trajectories {
                for turn in &traj.turns {
                    visits.push((turn.observation, turn.observation.turn_index));
                    returns.push(traj.reward_f64());
                }
            }
            self.baseline = self.baseline.value_update(&visits, &returns)?;
        }

        let eval_step = k.is_multiple_of(cfg.eval_every) || k + 1 == cfg.epo.total_steps;
        let (iid_success, ood_success) = if eval_step {
            (
                Some(evaluate(&self.params, env, Split::Iid, cfg.eval_episodes)?),
                Some(evaluate(&self.params, env, Split::Ood, cfg.eval_episodes)?),
            )
        } else {
            (None, None)
        };

        let (early, late) = early_late_entropy(&batch, cfg.early_late_tokens)?;
        let train_mean_reward =
            batch.trajectories.iter().map(Trajectory::reward_f64).sum::<f64>() / batch.len() as f64;

        self.window.push(h_bar)?;
        self.k += 1;
        self.metrics.push(MetricsRecord {
            k,
            train_mean_reward,
            l_mt: report.l_mt,
            l_h: report.l_h,
            l_smooth: report.l_smooth,
            beta_k: report.beta_k,
            l_epo: report.l_epo,
            batch_mean_entropy: h_bar,
            early_token_entropy: early,
            late_token_entropy: late,
            penalty_count: report.penalty_count,
            iid_success,
            ood_success,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }
}

fn derive_seed(root: u64, k: usize, traj_index: usize) -> u64 {
    let mut x = root ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (traj_index as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Rolls one episode under `params`, returning the completed trajectory.
pub fn rollout(
    params: &PolicyParams,
    env: &dyn Environment,
    task: TaskId,
    seed: u64,
    sampling: Sampling,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut state, mut obs) = env.reset(task, seed)?;
    let max_tokens = env.spec().max_tokens_per_turn;
    let mut turns = Vec::with_capacity(env.spec().horizon);
    while !state.done {
        let (steps, tokens) = act(params, obs, obs.turn_index, max_tokens, sampling, &mut rng);
        let action = env.decode_action(&tokens);
        let (next, next_obs, _) = env.step(&state, &action)?;
        turns.push(Turn { observation: obs, steps, decoded_action: action });
        state = next;
        obs = next_obs;
    }
    Ok(Trajectory {
        turns,
        terminal_reward: u8::from(state.succeeded),
        task_id: task,
        rollout_seed: seed,
    })
}

/// Collects B complete trajectories under the current policy. GRPO mode
/// assigns one IID task per contiguous group; PPO mode round-robins tasks
/// per trajectory. Deterministic given the run state.
pub fn collect_batch(
    state: &RunState,
    env: &dyn Environment,
    batch_size: usize,
    cfg: &EpoConfig,
) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let iid = env.spec().variants_in(Split::Iid);
    let k = state.k;
    let mut trajectories = Vec::with_capacity(batch_size);
    match cfg.effective_advantage_mode() {
        AdvantageMode::Grpo => {
            let group = cfg.group_size;
            let n_groups = batch_size / group;
            for g in 0..n_groups {
                let task = iid[(k * n_groups + g) % iid.len()];
                for j in 0..group {
                    let seed = derive_seed(state.rng_root, k, g * group + j);
                    trajectories.push(rollout(&state.params, env, task, seed, Sampling::Stochastic)?);
                }
            }
        }
        AdvantageMode::Ppo => {
            for j in 0..batch_size {
                let task = iid[(k * batch_size + j) % iid.len()];
                let seed = derive_seed(state.rng_root, k, j);
                trajectories.push(rollout(&state.params, env, task, seed, Sampling::Stochastic)?);
            }
        }
    }
    Batch::new(trajectories, k)
}

fn compute_advantages(batch: &Batch, baseline: &ValueBaseline, cfg: &EpoConfig) -> Result<Advantages> {
    match cfg.effective_advantage_mode() {
        AdvantageMode::Ppo => {
            let per_turn = ppo_advantage(batch, baseline);
            if cfg.variant == Variant::Ea {
                // Entropy bonus per token, from the rollout-recorded
                // entropies (constants: no gradient flows through them).
                let values = batch
                    .trajectories
                    .iter()
                    .zip(&per_turn)
                    .map(|(traj, row)| {
                        traj.turns
                            .iter()
                            .zip(row)
                            .map(|(turn, &a)| {
                                turn.steps
                                    .iter()
                                    .map(|s| ea_shaped_advantage(a, s.entropy, cfg.psi, cfg.ea_clip))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Ok(Advantages { values })
            } else {
                Advantages::from_per_turn(&per_turn, batch)
            }
        }
        AdvantageMode::Grpo => {
            let per_traj = grpo_advantages_for_batch(batch, cfg.group_size, cfg.grpo_delta)?;
            if cfg.variant == Variant::Ea {
                let values = batch
                    .trajectories
                    .iter()
                    .zip(&per_traj)
                    .map(|(traj, &a)| {
                        traj.turns
                            .iter()
                            .map(|turn| {
                                turn.steps
                                    .iter()
                                    .map(|s| ea_shaped_advantage(a, s.entropy, cfg.psi, cfg.ea_clip))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Ok(Advantages { values })
            } else {
                Advantages::from_per_trajectory(&per_traj, batch)
            }
        }
    }
}

/// Greedy (argmax-token) evaluation over one split's variants; returns the
/// fraction of episodes with a terminal reward of 1.
pub fn evaluate(
    params: &PolicyParams,
    env: &dyn Environment,
    split: Split,
    episodes: usize,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("episodes must be >= 1".into()));
    }
    let variants = env.spec().variants_in(split);
    if variants.is_empty() {
        return Err(Error::InvalidConfig(format!("{split} split is empty")));
    }
    let mut successes = 0usize;
    for e in 0..episodes {
        let task = variants[e % variants.len()];
        let traj = rollout(params, env, task, 0, Sampling::Greedy)?;
        successes += traj.terminal_reward as usize;
    }
    Ok(successes as f64 / episodes as f64)
}

/// Best-ever and tail-average over a success-rate series: succ_star is the
/// max; succ_mean averages the final `tail_fraction` of entries (at least
/// one).
pub fn summarize_success(rates: &[f64], tail_fraction: f64) -> Result<(f64, f64)> {
    if rates.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let succ_star = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = ((rates.len() as f64 * tail_fraction).floor() as usize).max(1);
    let tail_slice = &rates[rates.len() - tail..];
    let succ_mean = tail_slice.iter().sum::<f64>() / tail_slice.len() as f64;
    Ok((succ_star, succ_mean))
}

/// [`summarize_success`] over the evaluation records of a metrics stream.
pub fn summarize_run(metrics: &[MetricsRecord], split: Split, tail_fraction: f64) -> Result<(f64, f64)> {
    let rates: Vec<f64> = metrics
        .iter()
        .filter_map(|m| match split {
            Split::Iid => m.iid_success,
            Split::Ood => m.ood_success,
        })
        .collect();
    summarize_success(&rates, tail_fraction)
}

/// Mean token entropy over the first `n` and last `n` per-episode token
/// positions, averaged over the batch. Episodes shorter than `n` truncate,
/// so both sides then equal the whole-episode flat mean.
pub fn early_late_entropy(batch: &Batch, n: usize) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("early/late token count must be >= 1".into()));
    }
    let mut early_sum = 0.0;
    let mut late_sum = 0.0;
    for traj in &batch.trajectories {
        let hs: Vec<f64> = traj
            .turns
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.entropy))
            .collect();
        if hs.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let m = n.min(hs.len());
        early_sum += hs[..m].iter().sum::<f64>() / m as f64;
        late_sum += hs[hs.len() - m..].iter().sum::<f64>() / m as f64;
    }
    let b = batch.len() as f64;
    Ok((early_sum / b, late_sum / b))
}

/// Drives a full run: training loop, JSONL metrics, timing sidecar, and
/// periodic checkpoints. `out_dir = None` keeps everything in memory.
pub fn run_training(
    env: &dyn Environment,
    cfg: &TrainerConfig,
    rng_root: u64,
    out_dir: Option<&Path>,
) -> Result<RunState> {
    cfg.validate()?;
    let mut state = RunState::init(env, cfg, rng_root);
    resume_loop(env, cfg, &mut state, out_dir, None)?;
    Ok(state)
}

/// Continues a run from an existing state, writing outputs the same way as a
/// fresh run. Stops at K steps, or earlier after `max_new_steps`; a
/// checkpoint is written at loop exit either way so the run stays resumable.
pub fn resume_loop(
    env: &dyn Environment,
    cfg: &TrainerConfig,
    state: &mut RunState,
    out_dir: Option<&Path>,
    max_new_steps: Option<usize>,
) -> Result<()> {
    let mut sinks = out_dir.map(RunSinks::open).transpose()?;
    let stop_at = match max_new_steps {
        Some(n) => (state.k + n).min(cfg.epo.total_steps),
        None => cfg.epo.total_steps,
    };
    while state.k < stop_at {
        match state.train_step(env, cfg) {
            Ok(()) => {}
            Err(e) => {
                if let (Some(sinks), Error::NonFiniteLoss { k, detail }) = (&mut sinks, &e) {
                    sinks.write_abort(*k, detail)?;
                }
                return Err(e);
            }
        }
        let record = state.metrics.last().expect("train_step pushed a record");
        if let Some(sinks) = &mut sinks {
            sinks.write_record(record)?;
            if state.k.is_multiple_of(cfg.checkpoint_every) {
                sinks.write_checkpoint(&state.checkpoint())?;
            }
        }
    }
    if let Some(sinks) = &mut sinks {
        sinks.write_checkpoint(&state.checkpoint())?;
    }
    Ok(())
}

struct RunSinks {
    metrics: std::io::BufWriter<std::fs::File>,
    timing: std::io::BufWriter<std::fs::File>,
    dir: std::path::PathBuf,
}

impl RunSinks {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let metrics = std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("metrics.jsonl"))?,
        );
        let timing = std::io::BufWriter::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("timing.jsonl"))?,
        );
        Ok(Self { metrics, timing, dir: dir.to_path_buf() })
    }

    fn write_record(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")?;
        self.metrics.flush()?;
        let timing = serde_json::json!({ "k": record.k, "wall_clock_ms": record.wall_clock_ms });
        serde_json::to_writer(&mut self.timing, &timing)?;
        self.timing.write_all(b"\n")?;
        self.timing.flush()?;
        Ok(())
    }

    fn write_checkpoint(&self, checkpoint: &Checkpoint) -> Result<()> {
        let tmp = self.dir.join("checkpoint.json.tmp");
        let file = std::fs::File::create(&tmp)?;
        serde_json::to_writer(std::io::BufWriter::new(file), checkpoint)?;
        std::fs::rename(&tmp, self.dir.join("checkpoint.json"))?;
        Ok(())
    }

    fn write_abort(&self, k: usize, detail: &str) -> Result<()> {
        let diag = serde_json::json!({ "k": k, "error": "non_finite_loss", "detail": detail });
        std::fs::write(self.dir.join("abort.json"), serde_json::to_string_pretty(&diag)?)?;
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainLock, ChainLockSpec};

    fn tiny_env() -> ChainLock {
        ChainLock::new(ChainLockSpec {
            horizon: 3,
            vocab_size: 4,
            cmd_len: 1,
            n_variants: 4,
            n_subgoals: 2,
            variant_seed: 1,
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainerConfig {
        TrainerConfig {
            epo: EpoConfig {
                lambda: 0.02,
                total_steps: 6,
                batch_size: 4,
                group_size: 2,
                ..EpoConfig::default()
            },
            eval_every: 2,
            eval_episodes: 4,
            checkpoint_every: 3,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn collect_batch_is_deterministic() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let state = RunState::init(&env, &cfg, 77);
        let b1 = collect_batch(&state, &env, 1, &cfg.epo).unwrap();
        let b2 = collect_batch(&state, &env, 1, &cfg.epo).unwrap();
        assert_eq!(
            serde_json::to_string(&b1).unwrap(),
            serde_json::to_string(&b2).unwrap()
        );
    }

    #[test]
    fn grpo_batches_group_by_task() {
        let env = tiny_env();
        let mut cfg = tiny_cfg();
        cfg.epo.variant = Variant::Grpo;
        cfg.epo.batch_size = 8;
        cfg.epo.group_size = 4;
        let state = RunState::init(&env, &cfg, 3);
        let batch = collect_batch(&state, &env, 8, &cfg.epo).unwrap();
        batch.validate_groups(4).unwrap();
        let t0 = batch.trajectories[0].task_id;
        let t1 = batch.trajectories[4].task_id;
        assert!(batch.trajectories[..4].iter().all(|t| t.task_id == t0));
        assert!(batch.trajectories[4..].iter().all(|t| t.task_id == t1));
    }

    #[test]
    fn trajectory_lengths_respect_horizon() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let state = RunState::init(&env, &cfg, 5);
        let batch = collect_batch(&state, &env, 16, &cfg.epo).unwrap();
        assert!(batch.trajectories.iter().all(|t| t.turns.len() <= 3));
        assert!(batch
            .trajectories
            .iter()
            .all(|t| t.turns.iter().all(|turn| turn.steps.len() <= 1)));
    }

    #[test]
    fn train_step_enforces_k_guard_and_window_discipline() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let mut state = RunState::init(&env, &cfg, 9);
        for expect_k in 0..6 {
            assert_eq!(state.k, expect_k);
            state.train_step(&env, &cfg).unwrap();
            // After step k the window holds exactly k+1 entries and the k-th
            // equals that step's batch-mean entropy.
            assert_eq!(state.window.len(), expect_k + 1);
            let pushed = state.window.entries().last().unwrap();
            assert_eq!(pushed, state.metrics[expect_k].batch_mean_entropy);
        }
        assert!(state.train_step(&env, &cfg).is_err());
        // Step 0 skipped smoothing exactly.
        assert_eq!(state.metrics[0].l_smooth, 0.0);
    }

    #[test]
    fn identical_seeds_give_bit_identical_metrics() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let mut a = RunState::init(&env, &cfg, 123);
        let mut b = RunState::init(&env, &cfg, 123);
        for _ in 0..4 {
            a.train_step(&env, &cfg).unwrap();
            b.train_step(&env, &cfg).unwrap();
        }
        let ja = serde_json::to_string(&a.metrics).unwrap();
        let jb = serde_json::to_string(&b.metrics).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn ppo_variant_has_zero_entropy_contribution() {
        let env = tiny_env();
        let mut cfg = tiny_cfg();
        cfg.epo.variant = Variant::Ppo;
        let mut state = RunState::init(&env, &cfg, 2);
        state.train_step(&env, &cfg).unwrap();
        state.train_step(&env, &cfg).unwrap();
        for m in &state.metrics {
            assert_eq!(m.l_smooth, 0.0);
            assert_eq!(m.l_epo, m.l_mt);
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_bounded() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let state = RunState::init(&env, &cfg, 0);
        let r1 = evaluate(&state.params, &env, Split::Iid, 8).unwrap();
        let r2 = evaluate(&state.params, &env, Split::Iid, 8).unwrap();
        assert_eq!(r1, r2);
        assert!((0.0..=1.0).contains(&r1));
        assert!(evaluate(&state.params, &env, Split::Ood, 0).is_err());
    }

    #[test]
    fn oracle_policy_evaluates_to_one() {
        // Hard-code the optimal action sequence for each IID variant by
        // sharpening the tabular rows along the visited states.
        let env = tiny_env();
        let cfg = tiny_cfg();
        let mut state = RunState::init(&env, &cfg, 0);
        for &task in &env.spec().variants_in(Split::Iid) {
            let goals: Vec<_> = env.subgoals(task).to_vec();
            let (mut es, mut obs) = env.reset(task, 0).unwrap();
            let mut m = 0;
            while !es.done && m < goals.len() {
                let ctx = state.params.feature_map.context_index(&obs, obs.turn_index, &[]);
                let v = state.params.feature_map.vocab_size;
                state.params.weights[ctx * v + goals[m][0]] = 50.0;
                let action = crate::env::Action::Command(goals[m].clone());
                let (next, next_obs, _) = env.step(&es, &action).unwrap();
                es = next;
                obs = next_obs;
                m += 1;
            }
        }
        let rate = evaluate(&state.params, &env, Split::Iid, 4).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn uniform_policy_success_is_near_chance() {
        // ChainLock with |V|=8, T=4, 4-token commands: a uniform policy must
        // match a 16-token hidden sequence, success probability |V|^{-4T} =
        // 8^{-16}; statistically indistinguishable from zero at 100 episodes.
        let env = ChainLock::new(ChainLockSpec {
            horizon: 4,
            vocab_size: 8,
            cmd_len: 4,
            n_variants: 2,
            n_subgoals: 4,
            variant_seed: 0,
        })
        .unwrap();
        let cfg = TrainerConfig::default();
        let state = RunState::init(&env, &cfg, 1);
        let mut successes = 0;
        for e in 0..100 {
            let traj = rollout(&state.params, &env, 0, 1000 + e, Sampling::Stochastic).unwrap();
            successes += traj.terminal_reward as u32;
        }
        assert_eq!(successes, 0);
    }

    #[test]
    fn summarize_success_tail_example() {
        let (star, mean) = summarize_success(&[0.2, 0.8, 0.6, 0.6], 0.5).unwrap();
        assert_eq!(star, 0.8);
        assert_eq!(mean, 0.6);
        let (star, mean) = summarize_success(&[0.4, 0.4, 0.4], 0.25).unwrap();
        assert_eq!(star, 0.4);
        assert_eq!(mean, 0.4);
        let (star, mean) = summarize_success(&[0.7], 0.25).unwrap();
        assert_eq!((star, mean), (0.7, 0.7));
        assert!(summarize_success(&[], 0.5).is_err());
    }

    #[test]
    fn early_late_entropy_cases() {
        use crate::env::{Action, Observation};
        use crate::traj::{TokenStep, Trajectory, Turn};
        let mk = |hs: &[f64]| Trajectory {
            turns: hs
                .iter()
                .enumerate()
                .map(|(t, &h)| Turn {
                    observation: Observation { state_id: 0, turn_index: t, feature_tag: 0 },
                    steps: vec![TokenStep { probs: vec![1.0], chosen: 0, logprob: 0.0, entropy: h }],
                    decoded_action: Action::NoOp,
                })
                .collect(),
            terminal_reward: 0,
            task_id: 0,
            rollout_seed: 0,
        };
        // Linearly decreasing entropy within the episode: early > late.
        let batch = Batch::new(vec![mk(&[1.0, 0.8, 0.6, 0.4, 0.2, 0.0])], 0).unwrap();
        let (early, late) = early_late_entropy(&batch, 2).unwrap();
        assert!((early - 0.9).abs() < 1e-12);
        assert!((late - 0.1).abs() < 1e-12);
        assert!(early > late);
        // n beyond the episode length truncates to the whole-episode mean.
        let (early, late) = early_late_entropy(&batch, 100).unwrap();
        assert!((early - 0.5).abs() < 1e-12);
        assert_eq!(early, late);
        // Constant entropy: both sides equal.
        let batch = Batch::new(vec![mk(&[0.7, 0.7, 0.7])], 0).unwrap();
        let (early, late) = early_late_entropy(&batch, 2).unwrap();
        assert_eq!(early, late);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let mut state = RunState::init(&env, &cfg, 1);
        state.params.weights.fill(f64::NAN);
        let err = state.train_step(&env, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { k: 0, .. }), "{err}");
        // The run driver records the abort next to the metrics.
        let dir = std::env::temp_dir().join(format!("epo_abort_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let mut state = RunState::init(&env, &cfg, 1);
        state.params.weights.fill(f64::NAN);
        assert!(resume_loop(&env, &cfg, &mut state, Some(&dir), None).is_err());
        let diag = std::fs::read_to_string(dir.join("abort.json")).unwrap();
        assert!(diag.contains("non_finite_loss"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn run_training_writes_metrics_and_checkpoint() {
        let dir = std::env::temp_dir().join(format!("epo_trainer_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let env = tiny_env();
        let cfg = tiny_cfg();
        let state = run_training(&env, &cfg, 42, Some(&dir)).unwrap();
        assert_eq!(state.k, 6);
        let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 6);
        assert!(!metrics.contains("wall_clock"));
        let checkpoint = load_checkpoint(&dir.join("checkpoint.json")).unwrap();
        assert_eq!(checkpoint.k, 6);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        // Full run in one go.
        let full = run_training(&env, &cfg, 31, None).unwrap();
        // Interrupted at step 3, then resumed from the checkpoint.
        let mut first = RunState::init(&env, &cfg, 31);
        for _ in 0..3 {
            first.train_step(&env, &cfg).unwrap();
        }
        let mut resumed = RunState::from_checkpoint(first.checkpoint());
        resume_loop(&env, &cfg, &mut resumed, None, None).unwrap();
        let tail_full = serde_json::to_string(&full.metrics[3..]).unwrap();
        let tail_resumed = serde_json::to_string(&resumed.metrics).unwrap();
        assert_eq!(tail_full, tail_resumed);
    }
}
