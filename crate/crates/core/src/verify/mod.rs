//! Independent references and the checks behind `verify-all`.

pub mod criteria;
pub mod gradcheck;
pub mod invariants;
pub mod oracles;

use std::fmt;
use std::path::Path;

use crate::harness::ExperimentConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{mark}] {}: {}", self.id, self.detail)
    }
}

/// Acceptance criteria followed by the per-module invariants. `scratch`
/// receives the determinism runs.
pub fn run_all(cfg: &ExperimentConfig, scratch: &Path) -> Vec<Check> {
    let mut checks = criteria::all(cfg, scratch);
    checks.extend(invariants::all(cfg));
    checks
}
