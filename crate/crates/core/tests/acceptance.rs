//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::process::ExitCode;

use driftlab::toolkit::{run_acceptance_with, AcceptanceOptions};

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes extra arguments; ignore all but `--list`
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let opts = AcceptanceOptions::default();
    println!("running acceptance suite (seed {})", opts.seed);
    let report = run_acceptance_with(&opts, |c| println!("{}", c.line()));
    let failed = report.criteria.iter().filter(|c| !(c.passed && c.within_time())).count();
    println!("acceptance: {} passed, {} failed", report.criteria.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
