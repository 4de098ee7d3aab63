//! Command-line front end: config-driven training runs, the tabular-MDP
//! verification suite, chart emission, and hyperparameter sweeps.

pub mod commands;
pub mod config;
pub mod svg;

/// Process exit codes: 0 success, 1 generic/check failure, 2 invalid
/// configuration, 3 non-finite loss during training.
pub fn classify_exit(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<config::ConfigError>().is_some() {
        return 2;
    }
    if let Some(core) = err.downcast_ref::<epo_core::Error>() {
        return match core {
            epo_core::Error::NonFiniteLoss { .. } => 3,
            epo_core::Error::InvalidConfig(_) => 2,
            _ => 1,
        };
    }
    1
}
