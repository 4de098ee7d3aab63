//! Process-level tests of the `epo` binary: exit codes, determinism of the
//! metrics files, and the plot pipeline over real run output.

use std::path::Path;
use std::process::Command;

fn epo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_epo"))
}

fn write_config(dir: &Path, out_dir: &Path, extra_loss: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"
[env]
name = "chain_lock"
horizon = 3
vocab_size = 4
subgoals = 2
variants = 4

[loss]
{extra_loss}

[trainer]
total_steps = 4
batch_size = 4
eval_every = 2
eval_episodes = 2

[run]
seeds = [3, 4]
out_dir = "{}"
"#,
        out_dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_succeeds_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("run_a"), "lambda = 0.02");
    let status = epo().args(["train", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(tmp.path().join("run_a/manifest.json").exists());
    assert!(tmp.path().join("run_a/seed_3/metrics.jsonl").exists());

    // Second run into a different directory: byte-identical metrics.
    let status = epo()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path().join("run_b"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for seed in [3, 4] {
        let a = std::fs::read(tmp.path().join(format!("run_a/seed_{seed}/metrics.jsonl"))).unwrap();
        let b = std::fs::read(tmp.path().join(format!("run_b/seed_{seed}/metrics.jsonl"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("run"), "kappa_l = 3.0\nkappa_r = 1.0");
    let output = epo().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("kappa"), "{stderr}");
}

#[test]
fn unknown_key_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("run"), "lambda_typo = 0.1");
    let output = epo().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("lambda_typo"), "{stderr}");
    assert!(stderr.contains("line"), "message should carry a location: {stderr}");
}

#[test]
fn verify_theory_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.jsonl");
    let output = epo()
        .args(["verify-theory", "--suite-size", "2", "--seed", "5", "--report"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stdout));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 10);

    // An impossible tolerance exposes the floating-point slack.
    let output = epo()
        .args(["verify-theory", "--suite-size", "1", "--seed", "5", "--tolerance-scale", "0"])
        .args(["--report"])
        .arg(tmp.path().join("strict.jsonl"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn plot_over_real_runs_writes_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &run_dir, "lambda = 0.02");
    assert_eq!(epo().args(["train", "--config"]).arg(&cfg).status().unwrap().code(), Some(0));

    let out = tmp.path().join("charts");
    let status = epo()
        .arg("plot")
        .arg(&run_dir)
        .arg("--out")
        .arg(&out)
        .args(["--smooth", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(csv.starts_with("metric,step,mean,min,max,n_runs"));
    assert!(csv.contains("iid_success"));
    for chart in ["reward.svg", "success.svg", "entropy.svg"] {
        assert!(out.join(chart).exists(), "{chart}");
    }
}

#[test]
fn sweep_produces_one_directory_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("unused"), "lambda = 0.02");
    let out = tmp.path().join("sweep");
    let status = epo()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "loss.variant=ppo,epo_base", "--param", "trainer.step_size=2.0,8.0"])
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let points: Vec<_> = std::fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).collect();
    assert_eq!(points.len(), 4);
}
