//! The eleven acceptance criteria on the default experiment configuration.
//! Prints one `[PASS]`/`[FAIL]` line per criterion and exits non-zero if
//! any fails. Criteria run concurrently; output keeps criterion order.

use std::process::ExitCode;

use iom_trading::harness::{ExperimentConfig, DEFAULT_SEED};
use iom_trading::verify::{criteria, Check};

type Criterion = fn(&ExperimentConfig) -> Check;

const CRITERIA: [Criterion; 11] = [
    |_| criteria::follower_oracle(DEFAULT_SEED),
    |_| criteria::branch_continuity(DEFAULT_SEED),
    criteria::concavity,
    criteria::ne_uniqueness,
    |_| criteria::value_monotonicity(DEFAULT_SEED),
    criteria::aoi_closed_form,
    criteria::mddr_near_optimal,
    criteria::mddr_stability,
    criteria::benchmark_ordering,
    |_| criteria::gradient_correctness(DEFAULT_SEED),
    |cfg| {
        let dir = tempfile::tempdir().expect("tempdir");
        criteria::end_to_end_determinism(cfg, dir.path())
    },
];

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let checks: Vec<Check> = std::thread::scope(|s| {
        let handles: Vec<_> = CRITERIA.iter().map(|c| s.spawn(|| c(&cfg))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("criterion panicked"))
            .collect()
    });
    for check in &checks {
        println!("{check}");
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("acceptance: {passed}/{} passed", checks.len());
    if passed == checks.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
