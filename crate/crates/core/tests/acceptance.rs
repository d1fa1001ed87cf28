//! One line per acceptance criterion; exits non-zero if any criterion fails.
//! Runs without the libtest harness so the lines are never captured.

use std::process::ExitCode;

use odewave_core::verify::{run_all, VerifyOptions};

fn main() -> ExitCode {
    let outcomes = match run_all(&VerifyOptions::default()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("acceptance suite could not start: {e}");
            return ExitCode::FAILURE;
        }
    };
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if outcomes.len() != 11 || failed > 0 {
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
