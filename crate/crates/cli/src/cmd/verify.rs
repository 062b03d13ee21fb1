use ccrank_core::verify::{run_checks, VerifyOptions};

use crate::error::{CliError, CliResult, Context};

pub fn run(seed: u64, corrupt_gradient: Option<String>) -> CliResult<()> {
    let report = run_checks(&VerifyOptions { seed, corrupt_gradient }).context("verify")?;
    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        println!("{mark} {}: {}", c.name, c.detail);
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    println!("{} checks, {} failed (seed {seed})", report.checks.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            report.checks.len(),
            failed.join(", ")
        )))
    }
}
