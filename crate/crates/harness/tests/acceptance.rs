//! One PASS/FAIL line per acceptance criterion.
//!
//! Criterion 1 is known to fail: one reference chunking entry (10% labels,
//! U/L 250) disagrees with the accuracies it is computed from. The target
//! fails if any other criterion fails or if criterion 1 starts passing.

use std::process::ExitCode;

use harness::criteria::{evaluate, CRITERIA};

const EXPECTED_FAILURES: [usize; 1] = [1];

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut surprises = Vec::new();
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let v = evaluate(c);
        println!("{}", v.line());
        if v.passed == EXPECTED_FAILURES.contains(&c.id) {
            surprises.push(c.id);
        }
    }
    if surprises.is_empty() {
        println!("acceptance: outcomes as expected (known failures: {EXPECTED_FAILURES:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected outcome for criteria {surprises:?}");
        ExitCode::FAILURE
    }
}
