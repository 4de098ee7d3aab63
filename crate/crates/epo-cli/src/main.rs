use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use epo_cli::commands::{plot, sweep, train, verify_theory};
use epo_cli::config::ExperimentConfig;
use epo_core::theory::SuiteConfig;

/// Entropy-regularized policy optimization laboratory.
#[derive(Parser)]
#[command(name = "epo", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run training for every seed in the experiment config.
    Train(TrainArgs),
    /// Run the randomized tabular-MDP verification suite.
    VerifyTheory(VerifyArgs),
    /// Aggregate run metrics into CSV and SVG charts.
    Plot(PlotArgs),
    /// Cartesian-product sweep over config keys, one run per point.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override run.out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from per-seed checkpoints where present.
    #[arg(long)]
    resume: bool,
    /// Take at most this many new steps this invocation (chunked training).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random MDP instances.
    #[arg(long, default_value_t = 50)]
    suite_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scales every tolerance; 0 exposes floating-point slack and fails.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    #[arg(long, default_value_t = 4)]
    max_states: usize,
    #[arg(long, default_value_t = 3)]
    max_actions: usize,
    #[arg(long, default_value_t = 4)]
    max_horizon: usize,
    /// Machine-readable report destination (one JSON object per check).
    #[arg(long, default_value = "theory_report.jsonl")]
    report: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories (each holding metrics.jsonl or seed_*/metrics.jsonl).
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Output directory for aggregate.csv and the SVG charts.
    #[arg(short, long, default_value = "plots")]
    out: PathBuf,
    /// Apply a trailing mean of this window before aggregation.
    #[arg(long)]
    smooth: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Repeatable: section.key=value1,value2
    #[arg(long = "param", required = true)]
    params: Vec<String>,
    /// Root directory for the per-point run directories.
    #[arg(short, long)]
    out_dir: PathBuf,
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train(args) => {
            let mut config = ExperimentConfig::from_path(&args.config)?;
            if let Some(out) = args.out_dir {
                config.run.out_dir = out;
            }
            let outcome = train::cmd_train(&config, args.resume, args.steps)?;
            println!("trained {} seed(s) into {}", outcome.seed_dirs.len(), outcome.out_dir.display());
            Ok(0)
        }
        Cmd::VerifyTheory(args) => {
            let cfg = SuiteConfig {
                n_mdps: args.suite_size,
                seed: args.seed,
                max_states: args.max_states,
                max_actions: args.max_actions,
                max_horizon: args.max_horizon,
                tol_scale: args.tolerance_scale,
            };
            let mut stdout = std::io::stdout().lock();
            let outcome = verify_theory::cmd_verify_theory(&cfg, Some(&args.report), &mut stdout)?;
            Ok(if outcome.all_passed { 0 } else { 1 })
        }
        Cmd::Plot(args) => {
            let mut stderr = std::io::stderr().lock();
            let outcome = plot::cmd_plot(&args.run_dirs, &args.out, args.smooth, &mut stderr)?;
            println!("wrote {} and {} chart(s)", outcome.csv_path.display(), outcome.chart_paths.len());
            Ok(0)
        }
        Cmd::Sweep(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let params: Vec<sweep::SweepParam> = args
                .params
                .iter()
                .map(|p| sweep::parse_param(p))
                .collect::<Result<_>>()?;
            let mut stderr = std::io::stderr().lock();
            let outcome = sweep::cmd_sweep(&text, &params, &args.out_dir, &mut stderr)?;
            println!("swept {} grid point(s) under {}", outcome.point_dirs.len(), args.out_dir.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(epo_cli::classify_exit(&err) as u8)
        }
    }
}
