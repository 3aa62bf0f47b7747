//! Checks shared by the granular test targets and the acceptance report.
#![allow(dead_code)]

pub mod analytic;
pub mod invariants;

/// Outcome of one named check.
pub type Check = (&'static str, fn() -> Result<(), String>);

/// Runs every check; returns the names and messages of failures.
pub fn run_all(checks: &[Check]) -> Vec<(&'static str, String)> {
    checks
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| (*name, e)))
        .collect()
}

/// Panics with a readable list if any check fails.
pub fn assert_all(checks: &[Check]) {
    let failures = run_all(checks);
    if !failures.is_empty() {
        let lines: Vec<String> = failures.iter().map(|(n, e)| format!("{n}: {e}")).collect();
        panic!("{} check(s) failed:\n{}", failures.len(), lines.join("\n"));
    }
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} (tol {tol})"))
}

pub fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}
