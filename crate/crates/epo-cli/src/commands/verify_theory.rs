//! The `verify-theory` subcommand: runs the randomized MDP verification
//! suite, writes one JSON object per check, and prints a summary table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::Result;

use epo_core::theory::{run_suite, CheckRecord, SuiteConfig};

pub struct TheoryOutcome {
    pub records: Vec<CheckRecord>,
    pub all_passed: bool,
}

pub fn cmd_verify_theory(
    cfg: &SuiteConfig,
    report_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<TheoryOutcome> {
    if cfg.n_mdps == 0 {
        anyhow::bail!("suite size must be >= 1");
    }
    let records = run_suite(cfg)?;

    if let Some(path) = report_path {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &records {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
    }

    // Per-check rollup: counts plus the worst observed value.
    let mut rollup: BTreeMap<&str, (usize, usize, f64, f64)> = BTreeMap::new();
    for r in &records {
        let entry = rollup.entry(r.check.as_str()).or_insert((0, 0, f64::NEG_INFINITY, r.threshold));
        entry.0 += 1;
        entry.1 += usize::from(r.passed);
        // "Worst" means largest gap/error, smallest slack.
        let badness = if r.check.contains("bound") || r.check.contains("bias") {
            -r.value
        } else {
            r.value
        };
        entry.2 = entry.2.max(badness);
        entry.3 = r.threshold;
    }
    writeln!(out, "{:<28} {:>6} {:>6}  {:>13}  {:>10}", "check", "runs", "pass", "worst", "threshold")?;
    for (check, (runs, pass, worst_badness, threshold)) in &rollup {
        let worst = if check.contains("bound") || check.contains("bias") {
            -worst_badness
        } else {
            *worst_badness
        };
        writeln!(out, "{check:<28} {runs:>6} {pass:>6}  {worst:>13.3e}  {threshold:>10.1e}")?;
    }
    let all_passed = records.iter().all(|r| r.passed);
    writeln!(out, "{}", if all_passed { "ALL CHECKS PASSED" } else { "CHECKS FAILED" })?;
    for failure in records.iter().filter(|r| !r.passed) {
        writeln!(
            out,
            "FAILED {} on mdp {}: value {:.6e} vs threshold {:.1e}; offending MDP: {}",
            failure.check,
            failure.mdp_index,
            failure.value,
            failure.threshold,
            serde_json::to_string(&failure.mdp)?,
        )?;
    }
    Ok(TheoryOutcome { records, all_passed })
}
