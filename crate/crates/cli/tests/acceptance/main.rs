//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any failed.
//!
//! `cargo test --test acceptance -- 4 6` runs only criteria 4 and 6.

mod banks;
mod gradients;
mod learning;
mod oracles;
mod protocol;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Outcome detail on success, reason on failure.
pub type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "gradient correctness", budget: Duration::from_secs(30), run: gradients::run },
    Criterion { id: 2, name: "oracle equivalence", budget: Duration::from_secs(60), run: oracles::run },
    Criterion { id: 3, name: "memory-bank invariants", budget: Duration::from_secs(60), run: banks::run },
    Criterion { id: 4, name: "end-to-end learning", budget: Duration::from_secs(120), run: learning::run },
    Criterion { id: 5, name: "mu ablation trend", budget: Duration::from_secs(900), run: cli_runs::mu_trend },
    Criterion { id: 6, name: "determinism", budget: Duration::from_secs(300), run: cli_runs::determinism },
    Criterion { id: 7, name: "protocol conformance", budget: Duration::from_secs(5), run: protocol::run },
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over time budget {:?}", c.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} {}: PASS ({detail}; {:.1}s)", c.id, c.name, elapsed.as_secs_f64()),
            Err(reason) => {
                failed += 1;
                println!("criterion {} {}: FAIL ({reason}; {:.1}s)", c.id, c.name, elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
