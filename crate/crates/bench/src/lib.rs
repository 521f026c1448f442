//! Fixtures shared by the benchmarks.

use grouploss_core::simulate::{sample_realistic, RealisticSimulator, SimulatedDataset};

/// Default realistic simulator sample of `n` rows.
pub fn realistic_fixture(n: usize, seed: u64) -> SimulatedDataset {
    sample_realistic(&RealisticSimulator::default(), n, seed).expect("default simulator is valid")
}
