//! The `train` subcommand: one training run per seed, each writing metrics,
//! timing, and checkpoints into its own directory, plus a shared manifest.

use std::path::{Path, PathBuf};

use anyhow::Result;

use epo_core::trainer::{load_checkpoint, resume_loop, RunState};

use crate::config::{ExperimentConfig, Manifest};

pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub seed_dirs: Vec<PathBuf>,
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Runs every seed of the experiment. Seeds execute as independent workers
/// writing to disjoint directories; outputs are deterministic per seed
/// regardless of scheduling. `steps_limit` caps how many new steps this
/// invocation takes (for chunked training); `resume` picks runs back up from
/// their checkpoints.
pub fn cmd_train(
    config: &ExperimentConfig,
    resume: bool,
    steps_limit: Option<usize>,
) -> Result<TrainOutcome> {
    let out_dir = config.run.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let manifest = Manifest::new(config);
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let trainer_cfg = config.build_trainer()?;
    let seed_dirs: Vec<PathBuf> = config.run.seeds.iter().map(|s| seed_dir(&out_dir, *s)).collect();

    let results: Vec<Result<(), epo_core::Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .run
            .seeds
            .iter()
            .zip(&seed_dirs)
            .map(|(&seed, dir)| {
                let cfg = trainer_cfg.clone();
                let config = config.clone();
                scope.spawn(move || -> Result<(), epo_core::Error> {
                    let env = config
                        .build_env()
                        .map_err(|e| epo_core::Error::InvalidConfig(e.to_string()))?;
                    let checkpoint_path = dir.join("checkpoint.json");
                    let mut state = if resume && checkpoint_path.exists() {
                        RunState::from_checkpoint(load_checkpoint(&checkpoint_path)?)
                    } else {
                        RunState::init(env.as_ref(), &cfg, seed)
                    };
                    resume_loop(env.as_ref(), &cfg, &mut state, Some(dir), steps_limit)?;
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });

    for result in results {
        result?;
    }
    Ok(TrainOutcome { out_dir, seed_dirs })
}
