//! Experiment configuration: a TOML file with four sections (env, policy,
//! loss, trainer) plus run settings. Unknown keys are rejected so a typo
//! never silently drops a hyperparameter.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use epo_core::env::{ChainLock, ChainLockSpec, Environment, GridQuest, GridQuestSpec};
use epo_core::losses::{AdvantageMode, EpoConfig, PenaltyMode, Variant};
use epo_core::policy::ScorerKind;
use epo_core::trainer::TrainerConfig;

/// Configuration-stage failure; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// `chain_lock` or `grid_quest`.
    pub name: String,
    pub horizon: Option<usize>,
    pub vocab_size: Option<usize>,
    pub tokens_per_turn: Option<usize>,
    pub variants: Option<usize>,
    pub subgoals: Option<usize>,
    #[serde(default)]
    pub variant_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// `tabular` or `one_hidden`.
    pub scorer: String,
    pub hidden_width: usize,
    pub prefix_buckets: usize,
    pub feature_dim: usize,
    pub value_learning_rate: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            scorer: "tabular".into(),
            hidden_width: 16,
            prefix_buckets: 4,
            feature_dim: 24,
            value_learning_rate: 0.2,
        }
    }
}

/// Loss-term scalars, keyed by the method's symbol names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub variant: String,
    pub advantage_mode: String,
    pub penalty_mode: String,
    pub lambda: f64,
    pub alpha: f64,
    pub kappa_l: f64,
    pub kappa_r: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda_d: f64,
    pub clip_eps: f64,
    pub grpo_delta: f64,
    /// Accepted and echoed into the manifest; consumed by nothing.
    pub lambda_k: f64,
    pub lambda_lo: f64,
    pub psi: f64,
    pub ea_clip: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = EpoConfig::default();
        Self {
            variant: "epo".into(),
            advantage_mode: "ppo".into(),
            penalty_mode: "hinge".into(),
            lambda: d.lambda,
            alpha: d.alpha,
            kappa_l: d.kappa_l,
            kappa_r: d.kappa_r,
            beta_start: d.beta_start,
            beta_end: d.beta_end,
            lambda_d: d.lambda_d,
            clip_eps: d.clip_eps,
            grpo_delta: d.grpo_delta,
            lambda_k: d.lambda_k,
            lambda_lo: d.lambda_lo,
            psi: d.psi,
            ea_clip: d.ea_clip,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub total_steps: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub step_size: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub tail_fraction: f64,
    pub early_late_tokens: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            total_steps: t.epo.total_steps,
            batch_size: t.epo.batch_size,
            group_size: t.epo.group_size,
            step_size: t.step_size,
            eval_every: t.eval_every,
            eval_episodes: t.eval_episodes,
            tail_fraction: t.tail_fraction,
            early_late_tokens: t.early_late_tokens,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry the TOML line/column.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_env()?;
        self.build_trainer()?;
        if self.run.seeds.is_empty() {
            return cfg_err("run.seeds must list at least one seed");
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.run.seeds.len() {
            return cfg_err("run.seeds contains duplicates");
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>, ConfigError> {
        match self.env.name.as_str() {
            "chain_lock" => {
                let spec = ChainLockSpec {
                    horizon: self.env.horizon.unwrap_or(6),
                    vocab_size: self.env.vocab_size.unwrap_or(8),
                    cmd_len: self.env.tokens_per_turn.unwrap_or(1),
                    n_variants: self.env.variants.unwrap_or(8),
                    n_subgoals: self.env.subgoals.unwrap_or(3),
                    variant_seed: self.env.variant_seed,
                };
                ChainLock::new(spec)
                    .map(|e| Box::new(e) as Box<dyn Environment>)
                    .map_err(|e| ConfigError(format!("env: {e}")))
            }
            "grid_quest" => {
                if self.env.vocab_size.is_some_and(|v| v != 2) {
                    return cfg_err("env.vocab_size is fixed at 2 for grid_quest");
                }
                if self.env.tokens_per_turn.is_some_and(|t| t != 2) {
                    return cfg_err("env.tokens_per_turn is fixed at 2 for grid_quest");
                }
                if self.env.subgoals.is_some() {
                    return cfg_err("env.subgoals does not apply to grid_quest");
                }
                let spec = GridQuestSpec {
                    horizon: self.env.horizon.unwrap_or(8),
                    n_variants: self.env.variants.unwrap_or(8),
                    variant_seed: self.env.variant_seed,
                };
                GridQuest::new(spec)
                    .map(|e| Box::new(e) as Box<dyn Environment>)
                    .map_err(|e| ConfigError(format!("env: {e}")))
            }
            other => cfg_err(format!("env.name must be chain_lock or grid_quest, got {other:?}")),
        }
    }

    pub fn build_trainer(&self) -> Result<TrainerConfig, ConfigError> {
        let variant = match self.loss.variant.as_str() {
            "ppo" => Variant::Ppo,
            "grpo" => Variant::Grpo,
            "epo" => Variant::Epo,
            "epo_base" => Variant::EpoBase,
            "epo_decay" => Variant::EpoDecay,
            "ea" => Variant::Ea,
            other => return cfg_err(format!("loss.variant {other:?} unknown")),
        };
        let advantage_mode = match self.loss.advantage_mode.as_str() {
            "ppo" => AdvantageMode::Ppo,
            "grpo" => AdvantageMode::Grpo,
            other => return cfg_err(format!("loss.advantage_mode {other:?} unknown")),
        };
        let penalty_mode = match self.loss.penalty_mode.as_str() {
            "literal" => PenaltyMode::Literal,
            "hinge" => PenaltyMode::Hinge,
            other => return cfg_err(format!("loss.penalty_mode {other:?} unknown")),
        };
        let scorer = match self.policy.scorer.as_str() {
            "tabular" => ScorerKind::Tabular,
            "one_hidden" => {
                if self.policy.hidden_width == 0 || self.policy.hidden_width > 32 {
                    return cfg_err("policy.hidden_width must lie in 1..=32");
                }
                ScorerKind::OneHidden { width: self.policy.hidden_width }
            }
            other => return cfg_err(format!("policy.scorer {other:?} unknown")),
        };
        let epo = EpoConfig {
            lambda: self.loss.lambda,
            alpha: self.loss.alpha,
            kappa_l: self.loss.kappa_l,
            kappa_r: self.loss.kappa_r,
            beta_start: self.loss.beta_start,
            beta_end: self.loss.beta_end,
            lambda_d: self.loss.lambda_d,
            total_steps: self.trainer.total_steps,
            clip_eps: self.loss.clip_eps,
            grpo_delta: self.loss.grpo_delta,
            batch_size: self.trainer.batch_size,
            group_size: self.trainer.group_size,
            variant,
            penalty_mode,
            advantage_mode,
            lambda_lo: self.loss.lambda_lo,
            psi: self.loss.psi,
            ea_clip: self.loss.ea_clip,
            lambda_k: self.loss.lambda_k,
        };
        let cfg = TrainerConfig {
            epo,
            step_size: self.trainer.step_size,
            eval_every: self.trainer.eval_every,
            eval_episodes: self.trainer.eval_episodes,
            tail_fraction: self.trainer.tail_fraction,
            early_late_tokens: self.trainer.early_late_tokens,
            checkpoint_every: self.trainer.checkpoint_every,
            scorer,
            prefix_buckets: self.policy.prefix_buckets,
            feature_dim: self.policy.feature_dim,
            value_learning_rate: self.policy.value_learning_rate,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }
}

/// What `train` records next to the run outputs: the config as parsed, its
/// hash, the code version, and the seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub version: String,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(config).expect("config serializes");
        let hash = Sha256::digest(&canonical);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            config: config.clone(),
            config_sha256: hex,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.run.seeds.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[env]
name = "chain_lock"

[run]
seeds = [1, 2]
out_dir = "runs/demo"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.loss.lambda, 0.001);
        assert_eq!(cfg.loss.kappa_r, 2.0);
        assert_eq!(cfg.trainer.eval_every, 5);
        let trainer = cfg.build_trainer().unwrap();
        assert_eq!(trainer.epo.beta_start, 2.0);
        cfg.build_env().unwrap();
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("[run]", "[loss]\nlambda_typo = 0.1\n\n[run]");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("lambda_typo"), "{err}");
    }

    #[test]
    fn band_inversion_is_rejected() {
        let text = MINIMAL.replace("[run]", "[loss]\nkappa_l = 3.0\nkappa_r = 1.0\n\n[run]");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("[env\nname = \"chain_lock\"").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn grid_quest_rejects_foreign_knobs() {
        let text = MINIMAL
            .replace("name = \"chain_lock\"", "name = \"grid_quest\"\nsubgoals = 3");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = MINIMAL.replace("name = \"chain_lock\"", "name = \"grid_quest\"");
        ExperimentConfig::parse(&text).unwrap().build_env().unwrap();
    }

    #[test]
    fn manifest_echoes_parsed_values() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let manifest = Manifest::new(&cfg);
        assert_eq!(
            serde_json::to_string(&manifest.config).unwrap(),
            serde_json::to_string(&cfg).unwrap()
        );
        assert_eq!(manifest.config_sha256.len(), 64);
        assert_eq!(manifest.seeds, vec![1, 2]);
    }
}
