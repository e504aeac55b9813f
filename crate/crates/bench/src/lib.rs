//! Benchmark fixtures shared by the criterion targets.

use sviph::instances::{gen_pseudo_slcp, GeneratorParams};
use sviph::{PhaConfig, SviProblem, TwoStageSlcp};

/// Positive semidefinite instance of the given shape, so that every solve
/// runs to convergence.
pub fn monotone_instance(n1: usize, n2: usize, scenarios: usize, seed: u64) -> TwoStageSlcp {
    let mut p = GeneratorParams::new(n1, n2, scenarios, seed);
    p.monotone_only = true;
    gen_pseudo_slcp(&p).expect("generator accepts positive sizes")
}

pub fn monotone_problem(n1: usize, n2: usize, scenarios: usize, seed: u64) -> SviProblem {
    monotone_instance(n1, n2, scenarios, seed).to_problem()
}

/// Default configuration without history recording, single-threaded.
pub fn quiet_config(r: f64) -> PhaConfig {
    let mut cfg = PhaConfig::new(r);
    cfg.record_history = false;
    cfg.threads = Some(1);
    cfg
}
