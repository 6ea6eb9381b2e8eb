//! Fixtures shared by the benchmarks.

use difftraj::{ArchConfig, DenoiserParams, NoiseSchedule};

pub fn fixture(seed: u64) -> (DenoiserParams, NoiseSchedule) {
    let schedule = NoiseSchedule::linear(100, 1e-3, 0.2).expect("valid schedule");
    let params = DenoiserParams::init(&ArchConfig::default(), seed).expect("valid arch");
    (params, schedule)
}
