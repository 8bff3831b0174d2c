//! One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

use std::process::ExitCode;

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; only bare
    // numbers select criteria.
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let reports = issl_lab::acceptance::run(&only, |r| println!("{}", r.line()));
    let failed = reports.iter().filter(|r| !r.outcome.passed).count();
    println!("acceptance: {} passed, {failed} failed", reports.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
