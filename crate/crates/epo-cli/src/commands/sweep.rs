//! The `sweep` subcommand: a cartesian product over listed key values, one
//! run directory per grid point. Overrides are applied to the parsed TOML
//! tree and re-validated, so a mistyped key fails instead of being ignored.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::commands::train::cmd_train;
use crate::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct SweepParam {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `section.key=v1,v2,...`.
pub fn parse_param(arg: &str) -> Result<SweepParam> {
    let (key, values) = arg
        .split_once('=')
        .with_context(|| format!("sweep parameter {arg:?} must look like section.key=v1,v2"))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if key.trim().is_empty() || values.is_empty() || values.iter().any(|v| v.is_empty()) {
        bail!("sweep parameter {arg:?} must list at least one non-empty value");
    }
    Ok(SweepParam { key: key.trim().to_string(), values })
}

fn parse_toml_value(raw: &str) -> toml::Value {
    #[derive(serde::Deserialize)]
    struct One {
        v: toml::Value,
    }
    toml::from_str::<One>(&format!("v = {raw}"))
        .map(|one| one.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, dotted: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("{dotted}: {part} is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!("dotted paths have at least one part")
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

/// Expands the cartesian product into (directory suffix, overrides) pairs.
pub fn grid_points(params: &[SweepParam]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for param in params {
        let mut next = Vec::with_capacity(points.len() * param.values.len());
        for point in &points {
            for value in &param.values {
                let mut p = point.clone();
                p.push((param.key.clone(), value.clone()));
                next.push(p);
            }
        }
        points = next;
    }
    points
}

pub struct SweepOutcome {
    pub point_dirs: Vec<PathBuf>,
}

pub fn cmd_sweep(
    base_config_text: &str,
    params: &[SweepParam],
    out_dir: &Path,
    log: &mut impl Write,
) -> Result<SweepOutcome> {
    if params.is_empty() {
        bail!("sweep needs at least one --param");
    }
    let base: toml::Value =
        toml::from_str(base_config_text).context("base config is not valid TOML")?;
    let mut point_dirs = Vec::new();
    for (idx, point) in grid_points(params).iter().enumerate() {
        let mut tree = base.clone();
        let mut name = format!("point_{idx:03}");
        for (key, value) in point {
            set_path(&mut tree, key, parse_toml_value(value))?;
            let short = key.rsplit('.').next().unwrap_or(key);
            name.push_str(&format!("__{}_{}", slug(short), slug(value)));
        }
        let point_dir = out_dir.join(&name);
        set_path(
            &mut tree,
            "run.out_dir",
            toml::Value::String(point_dir.to_string_lossy().into_owned()),
        )?;
        let text = toml::to_string(&tree).context("re-serializing swept config")?;
        let config = ExperimentConfig::parse(&text)
            .map_err(|e| anyhow::anyhow!("grid point {name}: {e}"))?;
        writeln!(log, "sweep point {name}: {:?}", point)?;
        cmd_train(&config, false, None)?;
        point_dirs.push(point_dir);
    }
    Ok(SweepOutcome { point_dirs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_parsing() {
        let p = parse_param("loss.lambda=0.001,0.01").unwrap();
        assert_eq!(p.key, "loss.lambda");
        assert_eq!(p.values, vec!["0.001", "0.01"]);
        assert!(parse_param("loss.lambda").is_err());
        assert!(parse_param("loss.lambda=").is_err());
    }

    #[test]
    fn grid_is_cartesian() {
        let params = vec![
            SweepParam { key: "a".into(), values: vec!["1".into(), "2".into()] },
            SweepParam { key: "b".into(), values: vec!["x".into(), "y".into(), "z".into()] },
        ];
        let points = grid_points(&params);
        assert_eq!(points.len(), 6);
        assert_eq!(points[0], vec![("a".to_string(), "1".to_string()), ("b".to_string(), "x".to_string())]);
    }

    #[test]
    fn sweep_runs_each_point_into_its_own_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let base = r#"
[env]
name = "chain_lock"
horizon = 3
vocab_size = 4
subgoals = 2
variants = 4

[trainer]
total_steps = 2
batch_size = 2
eval_every = 2
eval_episodes = 2

[run]
seeds = [1]
out_dir = "ignored"
"#;
        let params = vec![parse_param("loss.variant=ppo,epo_base").unwrap()];
        let mut log = Vec::new();
        let outcome = cmd_sweep(base, &params, tmp.path(), &mut log).unwrap();
        assert_eq!(outcome.point_dirs.len(), 2);
        for dir in &outcome.point_dirs {
            assert!(dir.join("manifest.json").exists(), "{}", dir.display());
            assert!(dir.join("seed_1/metrics.jsonl").exists());
        }
        assert!(outcome.point_dirs[0].file_name().unwrap().to_string_lossy().contains("variant_ppo"));
    }

    #[test]
    fn unknown_sweep_key_fails() {
        let base = r#"
[env]
name = "chain_lock"

[run]
seeds = [1]
out_dir = "x"
"#;
        let tmp = tempfile::tempdir().unwrap();
        let params = vec![parse_param("loss.lambda_typo=1").unwrap()];
        let mut log = Vec::new();
        assert!(cmd_sweep(base, &params, tmp.path(), &mut log).is_err());
    }
}
